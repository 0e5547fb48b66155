import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core.exceptions import RenderException
from models.camera import CameraView
from models.render_output import RenderOutput
from models.splats import PARAMETER_FIELDS, SplatSet, decode_params
from rasterizer.binning import ProjectedSplats, RasterSettings, TileBinning, bin_projected, project_splats
from rasterizer.kernels import forward_kernel
from rasterizer.sh import eval_sh_colors

logger = logging.getLogger(__name__)


@dataclass
class RenderContext:
    """Forward state needed to replay a render in the backward pass"""
    camera: CameraView
    settings: RasterSettings
    background: np.ndarray
    sh_degree: int
    projected: ProjectedSplats
    binning: TileBinning
    colors: np.ndarray
    color_passed: np.ndarray
    view_dirs: np.ndarray
    view_dist: np.ndarray
    quaternions: np.ndarray


def check_finite(splats: SplatSet):
    """Raise RenderException naming the first splat with a non-finite parameter"""
    for name in PARAMETER_FIELDS:
        values = getattr(splats, name)
        bad = ~np.isfinite(values).all(axis=tuple(range(1, values.ndim)))
        if bad.any():
            index = int(np.flatnonzero(bad)[0])
            raise RenderException(f"non-finite {name}", splat_index=index)


def view_directions(position: np.ndarray, camera: CameraView):
    """Unit directions from the camera centre to each splat, and the distances"""
    offset = position - camera.center
    dist = np.linalg.norm(offset, axis=1)
    dist = np.where(dist < 1e-12, 1e-12, dist)
    return offset / dist[:, None], dist


def render_forward(splats: SplatSet, camera: CameraView,
                   background: Sequence[float] = (0.0, 0.0, 0.0),
                   settings: Optional[RasterSettings] = None,
                   sh_degree: Optional[int] = None) -> RenderOutput:
    """Render one view by front-to-back blending of the splat discs

    Args:
        splats: splat set to render (read only)
        camera: target camera
        background: rgb composited behind the remaining transmittance
        settings: rasterization thresholds, defaults to RasterSettings()
        sh_degree: active SH degree, defaults to everything the set holds

    Returns:
        RenderOutput with a context usable by render_backward
    """
    settings = settings or RasterSettings()
    check_finite(splats)
    decoded = decode_params(splats)
    degree = splats.sh_degree if sh_degree is None else min(sh_degree, splats.sh_degree)
    bg = np.asarray(background, dtype=np.float64).reshape(3)

    projected = project_splats(decoded, camera)
    binning = bin_projected(projected, camera, settings)
    dirs, dist = view_directions(decoded.position, camera)
    colors, passed = eval_sh_colors(splats.sh_coeffs, dirs, degree)

    h, w = camera.height, camera.width
    color = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    median = np.zeros((h, w))
    depth_sum = np.zeros((h, w))
    normal = np.zeros((h, w, 3))
    distortion = np.zeros((h, w))
    final_t = np.ones((h, w))
    pair_hit = np.zeros(binning.n_pairs, dtype=np.bool_)

    forward_kernel(
        binning.tile_offsets, binning.tile_splats, binning.tiles_x, binning.tile_size, w, h,
        projected.centers, projected.axes_u, projected.axes_v, projected.planes,
        np.ascontiguousarray(projected.oriented_normals), np.ascontiguousarray(projected.scales),
        np.ascontiguousarray(projected.opacities), np.ascontiguousarray(colors),
        np.ascontiguousarray(projected.means2d),
        camera.fx, camera.fy, camera.cx, camera.cy, bg,
        settings.near, settings.min_alpha, settings.transmittance_floor,
        settings.alpha_clip, settings.lowpass_sigma,
        color, alpha, median, depth_sum, normal, distortion, final_t, pair_hit,
    )

    contributed = np.zeros(splats.count, dtype=bool)
    contributed[binning.tile_splats[pair_hit]] = True
    expected = np.zeros((h, w))
    np.divide(depth_sum, alpha, out=expected, where=alpha > 0.0)

    logger.debug(f"rendered {camera.name or 'view'}: {int(contributed.sum())}/{splats.count} splats contributed")
    context = RenderContext(
        camera=camera,
        settings=settings,
        background=bg,
        sh_degree=degree,
        projected=projected,
        binning=binning,
        colors=colors,
        color_passed=passed,
        view_dirs=dirs,
        view_dist=dist,
        quaternions=decoded.quaternion,
    )
    return RenderOutput(
        color=color,
        alpha=alpha,
        depth=median,
        expected_depth=expected,
        normal=normal,
        distortion=distortion,
        final_transmittance=final_t,
        contributed=contributed,
        in_frustum=binning.in_frustum.copy(),
        max_radius=binning.radius.copy(),
        context=context,
    )


def render_views(splats: SplatSet, cameras: Sequence[CameraView],
                 background: Sequence[float] = (0.0, 0.0, 0.0),
                 settings: Optional[RasterSettings] = None):
    """Render several views, yielding one RenderOutput per camera"""
    for camera in cameras:
        yield render_forward(splats, camera, background, settings)
