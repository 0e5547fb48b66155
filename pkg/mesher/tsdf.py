"""
Depth-map TSDF fusion over a dense voxel grid
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import Config
from core.exceptions import ConfigurationException, ResourceException
from models.camera import CameraView, TrainingView
from models.mesh import TsdfVolume
from models.splats import SplatSet, decode_params
from rasterizer.binning import RasterSettings
from rasterizer.renderer import render_forward

logger = logging.getLogger(__name__)

TRUNCATION_VOXELS = 5
OBJECT_VOXEL_RATIO = 0.004
OBJECT_BOX_INFLATION = 0.1
# voxels integrated per chunk
CHUNK_VOXELS = 1 << 21


@dataclass
class DepthFrame:
    """Median depth, colour and validity of one rendered view"""
    camera: CameraView
    depth: np.ndarray
    color: np.ndarray
    valid: np.ndarray


def render_depth_frames(splats: SplatSet, views: Sequence[Union[TrainingView, CameraView]],
                        d_trunc: float = np.inf, use_masks: bool = False,
                        background: Sequence[float] = (0.0, 0.0, 0.0),
                        settings: Optional[RasterSettings] = None) -> List[DepthFrame]:
    """Render every view; pixels without a 0.5 alpha crossing, beyond d_trunc or outside the mask are invalid"""
    frames = []
    for view in views:
        camera = view.camera if isinstance(view, TrainingView) else view
        output = render_forward(splats, camera, background, settings)
        valid = (output.depth > 0.0) & (output.depth <= d_trunc)
        if use_masks:
            if not isinstance(view, TrainingView):
                raise ConfigurationException("mask truncation needs training views with masks")
            valid &= view.mask > 0.5
        frames.append(DepthFrame(camera, output.depth, output.color, valid))
    return frames


def check_budget(dims: Tuple[int, int, int], voxel_size: float, budget: int):
    count = int(np.prod([int(d) for d in dims]))
    if count > budget:
        suggested = voxel_size * (count / budget) ** (1.0 / 3.0) * 1.01
        raise ResourceException(
            f"TSDF grid {dims[0]}x{dims[1]}x{dims[2]} ({count} voxels) exceeds the budget of {budget}; "
            f"use a voxel size of at least {suggested:.6g}")


def allocate_box(lo: np.ndarray, hi: np.ndarray, voxel_size: float, budget: int) -> TsdfVolume:
    """Grid covering [lo, hi] padded by the truncation band on every side"""
    truncation = TRUNCATION_VOXELS * voxel_size
    lo = np.asarray(lo, dtype=np.float64) - truncation
    hi = np.asarray(hi, dtype=np.float64) + truncation
    dims = tuple(int(np.ceil((h - l) / voxel_size)) + 1 for l, h in zip(lo, hi))
    check_budget(dims, voxel_size, budget)
    logger.debug(f"allocating TSDF grid {dims} with voxel size {voxel_size:.6g}")
    return TsdfVolume.allocate(lo, voxel_size, dims, truncation)


def integrate(volume: TsdfVolume, frame: DepthFrame):
    """Weighted running average of the clipped projective SDF (weight 1 per observation)"""
    camera = frame.camera
    h, w = camera.shape
    trunc = volume.truncation
    nx, ny, nz = volume.dims
    flat_tsdf = volume.tsdf.reshape(-1)
    flat_weight = volume.weight.reshape(-1)
    flat_color = volume.color.reshape(-1, 3)
    plane = ny * nz
    slab = max(1, CHUNK_VOXELS // plane)

    jj, kk = np.meshgrid(np.arange(ny), np.arange(nz), indexing='ij')
    for i0 in range(0, nx, slab):
        i1 = min(nx, i0 + slab)
        ii = np.arange(i0, i1)[:, None, None]
        index = np.stack(np.broadcast_arrays(ii, jj[None], kk[None]), axis=-1).reshape(-1, 3)
        points = volume.voxel_centers(index)
        cam = camera.to_camera(points)
        z = cam[:, 2]
        front = z > 1e-9
        safe = np.where(front, z, 1.0)
        u = camera.fx * cam[:, 0] / safe + camera.cx
        v = camera.fy * cam[:, 1] / safe + camera.cy
        col = np.floor(u).astype(np.int64)
        row = np.floor(v).astype(np.int64)
        inside = front & (col >= 0) & (col < w) & (row >= 0) & (row < h)
        sel = np.flatnonzero(inside)
        sel = sel[frame.valid[row[sel], col[sel]]]
        sdf = frame.depth[row[sel], col[sel]] - z[sel]
        near = sdf >= -trunc
        sel, sdf = sel[near], sdf[near]
        obs = np.clip(sdf, -trunc, trunc)

        target = i0 * plane + sel
        weight = flat_weight[target]
        updated = weight + 1.0
        flat_tsdf[target] = (flat_tsdf[target] * weight + obs) / updated
        rgb = frame.color[row[sel], col[sel]]
        flat_color[target] = ((flat_color[target] * weight[:, None] + rgb) / updated[:, None]).astype(np.float32)
        flat_weight[target] = updated


def fuse_frames(volume: TsdfVolume, frames: Sequence[DepthFrame]) -> TsdfVolume:
    for frame in frames:
        integrate(volume, frame)
    logger.info(f"Fused {len(frames)} views into {volume.dims} grid "
                f"({int(volume.observed.sum())}/{volume.voxel_count} voxels observed)")
    return volume


def fuse_bounded(splats: SplatSet, views: Sequence[Union[TrainingView, CameraView]],
                 voxel_size: float, d_trunc: float, use_masks: bool = False,
                 voxel_budget: Optional[int] = None,
                 background: Sequence[float] = (0.0, 0.0, 0.0),
                 settings: Optional[RasterSettings] = None) -> TsdfVolume:
    """Fuse median depth maps truncated at d_trunc (and at the object masks when use_masks)

    The grid covers the back-projection of every valid depth pixel.
    """
    if voxel_size <= 0 or d_trunc <= 0:
        raise ConfigurationException("voxel_size and d_trunc must be positive")
    budget = voxel_budget or Config().voxel_budget
    frames = render_depth_frames(splats, views, d_trunc, use_masks, background, settings)

    points = [back_project(frame) for frame in frames]
    points = np.concatenate(points) if points else np.zeros((0, 3))
    if len(points) == 0:
        logger.warning("No valid depth pixel in any view; the fused volume is empty")
        return TsdfVolume.allocate(np.zeros(3), voxel_size, (2, 2, 2), TRUNCATION_VOXELS * voxel_size)
    volume = allocate_box(points.min(axis=0), points.max(axis=0), voxel_size, budget)
    return fuse_frames(volume, frames)


def back_project(frame: DepthFrame) -> np.ndarray:
    """World positions of the valid depth pixels"""
    rays = frame.camera.ray_directions()[frame.valid]
    cam = rays * frame.depth[frame.valid][:, None]
    return (cam - frame.camera.translation) @ frame.camera.rotation


def object_bounds(splats: SplatSet) -> Tuple[np.ndarray, np.ndarray]:
    """Splat-centre bounding box inflated by 10%; a degenerate box falls back to the splat extents"""
    decoded = decode_params(splats)
    lo = decoded.position.min(axis=0)
    hi = decoded.position.max(axis=0)
    size = hi - lo
    reach = 3.0 * float(decoded.scale.max())
    if size.max() <= 0.0:
        size = np.full(3, 2.0 * reach)
    center = 0.5 * (lo + hi)
    half = 0.5 * size * (1.0 + OBJECT_BOX_INFLATION)
    return center - half, center + half


def fuse_object(splats: SplatSet, views: Sequence[Union[TrainingView, CameraView]],
                voxel_budget: Optional[int] = None,
                background: Sequence[float] = (0.0, 0.0, 0.0),
                settings: Optional[RasterSettings] = None,
                voxel_ratio: float = OBJECT_VOXEL_RATIO) -> TsdfVolume:
    """Parameter-free fusion over the object's bounding box, voxel size 0.004 x its largest extent"""
    if splats.count == 0:
        raise ConfigurationException("object-mode fusion needs at least one splat")
    budget = voxel_budget or Config().voxel_budget
    lo, hi = object_bounds(splats)
    voxel_size = voxel_ratio * float((hi - lo).max())
    volume = allocate_box(lo, hi, voxel_size, budget)
    frames = render_depth_frames(splats, views, np.inf, False, background, settings)
    return fuse_frames(volume, frames)
