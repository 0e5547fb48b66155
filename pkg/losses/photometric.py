from typing import Tuple

import numpy as np

from core.exceptions import ContractException
from losses.ssim import ssim_backward, ssim_map

DEFAULT_LAMBDA_DSSIM = 0.2


def photometric_loss(image: np.ndarray, render: np.ndarray,
                     lambda_dssim: float = DEFAULT_LAMBDA_DSSIM) -> Tuple[float, np.ndarray]:
    """(1 - lambda) * L1 + lambda * (1 - SSIM); returns value and gradient w.r.t. render"""
    image = np.asarray(image, dtype=np.float64)
    render = np.asarray(render, dtype=np.float64)
    if image.shape != render.shape:
        raise ContractException(f"image {image.shape} and render {render.shape} differ in shape")
    n = render.size
    diff = render - image
    l1 = float(np.abs(diff).mean())
    state = ssim_map(image, render)
    value = (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - float(state.ssim_map.mean()))

    grad = (1.0 - lambda_dssim) * np.sign(diff) / n
    grad -= lambda_dssim * ssim_backward(image, render, state, np.full(render.shape, 1.0 / n))
    return value, grad


def photometric_masked(image: np.ndarray, render: np.ndarray, mask: np.ndarray,
                       lambda_dssim: float = DEFAULT_LAMBDA_DSSIM) -> Tuple[float, np.ndarray]:
    """Photometric loss between the masked image and the masked render

    Returns:
        loss value and gradient w.r.t. the unmasked render
    """
    image = np.asarray(image, dtype=np.float64)
    render = np.asarray(render, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if image.shape != render.shape or mask.shape != image.shape[:2]:
        raise ContractException(
            f"image {image.shape}, render {render.shape} and mask {mask.shape} are inconsistent")
    m = mask[..., None]
    value, grad = photometric_loss(image * m, render * m, lambda_dssim)
    return value, grad * m
