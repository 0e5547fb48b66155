from typing import Optional, Tuple

import numpy as np

from core.config import TrainConfig
from core.exceptions import ContractException
from losses.background import background_loss
from losses.photometric import photometric_masked
from losses.regularizers import depth_distortion_map, normal_consistency_map
from models.camera import TrainingView
from models.render_output import PixelGradients, RenderOutput
from models.results import LossBreakdown


def effective_coefficients(config: TrainConfig, iteration: Optional[int] = None) -> Tuple[float, float, float]:
    """Regularizer weights after warmup; all terms are active when iteration is None"""
    alpha = config.alpha_coeff
    beta = config.beta_coeff
    if iteration is not None:
        if iteration <= config.depth_distortion_from_iter:
            alpha = 0.0
        if iteration <= config.normal_consistency_from_iter:
            beta = 0.0
    gamma = config.gamma_coeff if config.use_masks else 0.0
    return alpha, beta, gamma


def total_loss(view: TrainingView, output: RenderOutput, config: TrainConfig,
               iteration: Optional[int] = None) -> Tuple[LossBreakdown, PixelGradients]:
    """Masked photometric loss plus weighted distortion, normal and background terms

    Args:
        view: training view the output was rendered for
        output: forward render of the view's camera
        config: coefficients and switches
        iteration: current step, used for the regularizer warmups

    Returns:
        LossBreakdown and the per-pixel adjoints for render_backward
    """
    h, w = view.camera.shape
    if output.alpha.shape != (h, w):
        raise ContractException(f"render {output.alpha.shape} does not match view {view.index} {(h, w)}")
    alpha_c, beta_c, gamma_c = effective_coefficients(config, iteration)
    mask = view.mask if config.use_masks else np.ones_like(view.mask)

    photometric, grad_color = photometric_masked(view.image, output.color, mask, config.lambda_dssim)
    background, grad_alpha_b = background_loss(output.alpha, mask)
    distortion, grad_dist = depth_distortion_map(output.distortion)
    normal, grad_alpha_n, grad_normal, grad_depth = normal_consistency_map(
        output.alpha, output.normal, output.expected_depth, view.camera.ray_directions())

    total = photometric + alpha_c * distortion + beta_c * normal + gamma_c * background
    breakdown = LossBreakdown(
        total=total,
        photometric=photometric,
        background=background,
        depth_distortion=distortion,
        normal_consistency=normal,
        alpha_coeff=alpha_c,
        beta_coeff=beta_c,
        gamma_coeff=gamma_c,
    )
    grads = PixelGradients(
        color=grad_color,
        alpha=gamma_c * grad_alpha_b + beta_c * grad_alpha_n,
        expected_depth=beta_c * grad_depth,
        normal=beta_c * grad_normal,
        distortion=alpha_c * grad_dist,
    )
    return breakdown, grads
