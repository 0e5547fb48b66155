import numpy as np

from core.exceptions import ContractException, UndefinedMetricException
from losses.ssim import ssim_map

PSNR_INFINITY = float('inf')


def _check_inputs(gt: np.ndarray, render: np.ndarray, mask: np.ndarray):
    if gt.shape != render.shape:
        raise ContractException(f"image shapes differ: {gt.shape} vs {render.shape}")
    if mask.shape != gt.shape[:2]:
        raise ContractException(f"mask shape {mask.shape} does not match image {gt.shape[:2]}")
    if not np.any(mask > 0.5):
        raise UndefinedMetricException("metric is undefined for an empty mask")


def masked_mse(gt: np.ndarray, render: np.ndarray, mask: np.ndarray) -> float:
    """Squared error over the masked pixels, averaged over the three channels"""
    gt = np.asarray(gt, dtype=np.float64)
    render = np.asarray(render, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_inputs(gt, render, mask)
    diff = (gt - render) * mask[..., None]
    return float(np.sum(diff ** 2) / (np.sum(mask) * gt.shape[2]))


def masked_psnr(gt: np.ndarray, render: np.ndarray, mask: np.ndarray) -> float:
    """PSNR in dB over the masked pixels with peak value 1; identical images give +inf"""
    mse = masked_mse(gt, render, mask)
    if mse == 0.0:
        return PSNR_INFINITY
    return float(-10.0 * np.log10(mse))


def masked_ssim(gt: np.ndarray, render: np.ndarray, mask: np.ndarray) -> float:
    """SSIM of the masked images, averaged over the pixels inside the mask"""
    gt = np.asarray(gt, dtype=np.float64)
    render = np.asarray(render, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_inputs(gt, render, mask)
    m = mask[..., None]
    values = ssim_map(gt * m, render * m).ssim_map
    inside = mask > 0.5
    return float(values[inside].mean())


def psnr(gt: np.ndarray, render: np.ndarray) -> float:
    return masked_psnr(gt, render, np.ones(np.asarray(gt).shape[:2]))


def ssim(gt: np.ndarray, render: np.ndarray) -> float:
    return masked_ssim(gt, render, np.ones(np.asarray(gt).shape[:2]))


def format_psnr(value: float) -> str:
    return "inf" if np.isinf(value) else f"{value:.4f}"
