import logging
import sys
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# third-party loggers that flood DEBUG output
QUIET_LOGGERS = ('numba', 'PIL', 'trimesh')


def init_logging(debug: bool = False, log_file: Optional[str] = None, level: Optional[str] = None):
    """Initialize logging configuration

    debug wins over level; level is a name such as 'INFO' or 'WARNING'.
    """
    if debug:
        resolved = logging.DEBUG
    elif level:
        resolved = getattr(logging, level.upper(), logging.INFO)
    else:
        resolved = logging.INFO

    formatter = logging.Formatter(LOG_FORMAT)
    root = logging.getLogger()
    root.setLevel(resolved)
    root.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(resolved)
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(resolved)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(resolved, logging.WARNING))


def banner(message: str, width: int = 50):
    """Print a framed line to stdout"""
    print(f"\n{'=' * width}")
    print(f"  {message}")
    print(f"{'=' * width}\n")
