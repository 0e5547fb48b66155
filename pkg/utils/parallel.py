import logging
from typing import Optional

import numba

logger = logging.getLogger(__name__)


def set_threads(threads: Optional[int]) -> int:
    """Cap the numba worker pool; returns the active thread count"""
    if threads is not None:
        if threads < 1:
            threads = 1
        threads = min(threads, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(threads)
        logger.debug(f"numba workers capped at {threads}")
    return numba.get_num_threads()
