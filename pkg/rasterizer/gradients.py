"""
Analytic adjoint of render_forward
"""

import logging

import numpy as np

from core.exceptions import ContractException
from models.camera import CameraView
from models.render_output import PixelGradients, RenderOutput, SplatGradients
from models.splats import SplatSet
from rasterizer import kernels
from rasterizer.kernels import backward_kernel
from rasterizer.renderer import RenderContext, render_forward
from rasterizer.sh import sh_backward

logger = logging.getLogger(__name__)


def quaternion_matrix_vjp(q: np.ndarray, grad_R: np.ndarray) -> np.ndarray:
    """Pull a gradient on rotation matrices (m, 3, 3) back to unit quaternions (m, 4)"""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    G = grad_R
    dw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0]
              - x * G[:, 1, 2] - y * G[:, 2, 0] + x * G[:, 2, 1])
    dx = 2 * (y * G[:, 0, 1] + z * G[:, 0, 2] + y * G[:, 1, 0] - 2 * x * G[:, 1, 1]
              - w * G[:, 1, 2] + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2])
    dy = 2 * (-2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2] + x * G[:, 1, 0]
              + z * G[:, 1, 2] - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2])
    dz = 2 * (-2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2] + w * G[:, 1, 0]
              - 2 * z * G[:, 1, 1] + y * G[:, 1, 2] + x * G[:, 2, 0] + y * G[:, 2, 1])
    return np.stack([dw, dx, dy, dz], axis=1)


def _check_buffers(splats: SplatSet, camera: CameraView, output: RenderOutput, loss_grads: PixelGradients):
    h, w = camera.height, camera.width
    if output.alpha.shape != (h, w):
        raise ContractException(f"render buffers {output.alpha.shape} do not match camera {(h, w)}")
    if output.contributed.shape != (splats.count,):
        raise ContractException(
            f"render covers {output.contributed.shape[0]} splats, set holds {splats.count}")
    loss_grads.check_shape(h, w)


def pixel_to_pair_gradients(ctx: RenderContext, loss_grads: PixelGradients) -> np.ndarray:
    """Per (tile, candidate) partial gradients, (n_pairs, PAIR_WIDTH)"""
    binning, proj, camera, settings = ctx.binning, ctx.projected, ctx.camera, ctx.settings
    pair_grads = np.zeros((binning.n_pairs, kernels.PAIR_WIDTH))
    backward_kernel(
        binning.tile_offsets, binning.tile_splats, binning.tiles_x, binning.tile_size,
        camera.width, camera.height,
        proj.centers, proj.axes_u, proj.axes_v, proj.planes,
        np.ascontiguousarray(proj.oriented_normals), np.ascontiguousarray(proj.scales),
        np.ascontiguousarray(proj.opacities), np.ascontiguousarray(ctx.colors),
        np.ascontiguousarray(proj.means2d),
        camera.fx, camera.fy, camera.cx, camera.cy, ctx.background,
        settings.near, settings.min_alpha, settings.transmittance_floor,
        settings.alpha_clip, settings.lowpass_sigma,
        np.ascontiguousarray(loss_grads.color, dtype=np.float64),
        np.ascontiguousarray(loss_grads.alpha, dtype=np.float64),
        np.ascontiguousarray(loss_grads.expected_depth, dtype=np.float64),
        np.ascontiguousarray(loss_grads.normal, dtype=np.float64),
        np.ascontiguousarray(loss_grads.distortion, dtype=np.float64),
        pair_grads,
    )
    return pair_grads


def render_backward(splats: SplatSet, camera: CameraView, output: RenderOutput,
                    loss_grads: PixelGradients) -> SplatGradients:
    """Gradients of a scalar loss w.r.t. every stored splat parameter

    The pair partials are summed per splat in tile order, so the result does
    not depend on the number of worker threads.
    """
    _check_buffers(splats, camera, output, loss_grads)
    ctx = output.context
    if ctx is None:
        logger.debug("no forward state attached, re-rendering")
        ctx = render_forward(splats, camera).context

    m = splats.count
    grads = SplatGradients.zeros_like(splats)
    if m == 0:
        return grads

    pair_grads = pixel_to_pair_gradients(ctx, loss_grads)
    per_splat = np.zeros((m, kernels.PAIR_WIDTH))
    np.add.at(per_splat, ctx.binning.tile_splats, pair_grads)
    per_splat[~output.contributed] = 0.0

    d_center = per_splat[:, kernels.PAIR_CENTER:kernels.PAIR_CENTER + 3]
    d_axis_u = per_splat[:, kernels.PAIR_AXIS_U:kernels.PAIR_AXIS_U + 3]
    d_axis_v = per_splat[:, kernels.PAIR_AXIS_V:kernels.PAIR_AXIS_V + 3]
    d_plane = per_splat[:, kernels.PAIR_PLANE:kernels.PAIR_PLANE + 3]
    d_scale = per_splat[:, kernels.PAIR_SCALE:kernels.PAIR_SCALE + 2]
    d_opacity = per_splat[:, kernels.PAIR_OPACITY]
    d_color = per_splat[:, kernels.PAIR_COLOR:kernels.PAIR_COLOR + 3]

    proj = ctx.projected
    cz = np.where(np.abs(proj.depths) < 1e-12, 1e-12, proj.depths)
    grads.screen = np.hypot(d_center[:, 0] * cz / camera.fx * camera.width * 0.5,
                            d_center[:, 1] * cz / camera.fy * camera.height * 0.5)

    # camera space -> world space
    R = camera.rotation
    d_position = d_center @ R
    d_frames = np.stack([d_axis_u @ R, d_axis_v @ R, d_plane @ R], axis=2)

    q_raw = np.asarray(splats.rotation, dtype=np.float64)
    q_norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    q = ctx.quaternions
    d_qhat = quaternion_matrix_vjp(q, d_frames)
    d_rotation = (d_qhat - q * np.sum(q * d_qhat, axis=1, keepdims=True)) / q_norm

    d_coeffs, d_dirs = sh_backward(splats.sh_coeffs, ctx.view_dirs, ctx.sh_degree,
                                   ctx.color_passed, d_color)
    dirs = ctx.view_dirs
    d_position += (d_dirs - dirs * np.sum(dirs * d_dirs, axis=1, keepdims=True)) / ctx.view_dist[:, None]

    opacity = proj.opacities
    grads.position = d_position
    grads.rotation = d_rotation
    grads.log_scale = d_scale * proj.scales
    grads.opacity_logit = d_opacity * opacity * (1.0 - opacity)
    grads.sh_coeffs = d_coeffs
    return grads
