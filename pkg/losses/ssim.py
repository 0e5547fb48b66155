"""
Gaussian-window SSIM on (h, w, c) images and its adjoint
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


@lru_cache(maxsize=4)
def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def window_filter(image: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter over the two spatial axes, zero padded"""
    g = gaussian_window()
    out = ndimage.correlate1d(image, g, axis=0, mode='constant', cval=0.0)
    return ndimage.correlate1d(out, g, axis=1, mode='constant', cval=0.0)


@dataclass
class SsimState:
    """Window statistics kept for the backward pass"""
    ssim_map: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray


def ssim_map(x: np.ndarray, y: np.ndarray) -> SsimState:
    """Per-pixel, per-channel SSIM between x and y"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu_x = window_filter(x)
    mu_y = window_filter(y)
    var_x = window_filter(x * x) - mu_x ** 2
    var_y = window_filter(y * y) - mu_y ** 2
    cov = window_filter(x * y) - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + C1
    a2 = 2 * cov + C2
    b1 = mu_x ** 2 + mu_y ** 2 + C1
    b2 = var_x + var_y + C2
    return SsimState(a1 * a2 / (b1 * b2), mu_x, mu_y, a1, a2, b1, b2)


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    return float(ssim_map(x, y).ssim_map.mean())


def ssim_backward(x: np.ndarray, y: np.ndarray, state: SsimState, grad_map: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. y of sum(grad_map * ssim_map(x, y))"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    S, mu_x, mu_y = state.ssim_map, state.mu_x, state.mu_y
    denom = state.b1 * state.b2
    d_mu_y = 2 * mu_x * (state.a2 - state.a1) / denom - 2 * mu_y * S * (1.0 / state.b1 - 1.0 / state.b2)
    d_m_yy = -S / state.b2
    d_m_xy = 2 * state.a1 / denom
    # the symmetric zero-padded window is its own adjoint
    return (window_filter(grad_map * d_mu_y)
            + 2 * y * window_filter(grad_map * d_m_yy)
            + x * window_filter(grad_map * d_m_xy))
