from typing import Tuple

import numpy as np

from core.exceptions import ContractException


def background_loss(alpha: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean accumulated opacity outside the object mask

    Returns:
        loss value and its gradient w.r.t. alpha, (1 - M) / (h * w)
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if alpha.shape != mask.shape or alpha.ndim != 2:
        raise ContractException(f"alpha {alpha.shape} and mask {mask.shape} must be equal 2D shapes")
    outside = 1.0 - mask
    value = float(np.mean(alpha * outside))
    return value, outside / alpha.size
