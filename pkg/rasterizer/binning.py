"""
Splat projection and 16x16 tile binning
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from core.config import TrainConfig
from models.camera import CameraView
from models.splats import DecodedSplats, SplatSet, decode_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RasterSettings:
    """Rasterization thresholds; termination_threshold=None disables early termination"""
    tile_size: int = 16
    near: float = 0.01
    min_alpha: float = 1.0 / 255.0
    termination_threshold: Optional[float] = 0.9999
    alpha_clip: float = 0.999
    footprint_sigma: float = 3.0
    lowpass_sigma: float = 0.5

    @property
    def transmittance_floor(self) -> float:
        if self.termination_threshold is None:
            return -1.0
        return 1.0 - self.termination_threshold

    @property
    def lowpass_radius(self) -> float:
        return 3.0 * self.lowpass_sigma

    @classmethod
    def from_config(cls, config: TrainConfig) -> 'RasterSettings':
        return cls(min_alpha=config.min_splat_alpha,
                   termination_threshold=config.alpha_termination_threshold)

    @classmethod
    def smooth(cls) -> 'RasterSettings':
        """No alpha skip, no early termination and a wide footprint"""
        return cls(min_alpha=0.0, termination_threshold=None, footprint_sigma=10.0)


@dataclass
class ProjectedSplats:
    """Splat discs expressed in one camera's frame"""
    centers: np.ndarray
    axes_u: np.ndarray
    axes_v: np.ndarray
    planes: np.ndarray
    oriented_normals: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    means2d: np.ndarray

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])

    @property
    def depths(self) -> np.ndarray:
        return self.centers[:, 2]


def project_splats(decoded: DecodedSplats, camera: CameraView) -> ProjectedSplats:
    """Rotate splat frames into camera space and project the centres"""
    R = camera.rotation
    centers = decoded.position @ R.T + camera.translation
    frames = np.einsum('ij,mjk->mik', R, decoded.frames)
    planes = frames[:, :, 2]
    facing = np.einsum('mi,mi->m', planes, centers)
    # oriented toward the camera
    sign = np.where(facing > 0.0, -1.0, 1.0)
    z = centers[:, 2]
    safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
    means2d = np.stack([camera.fx * centers[:, 0] / safe + camera.cx,
                        camera.fy * centers[:, 1] / safe + camera.cy], axis=1)
    return ProjectedSplats(
        centers=centers,
        axes_u=np.ascontiguousarray(frames[:, :, 0]),
        axes_v=np.ascontiguousarray(frames[:, :, 1]),
        planes=np.ascontiguousarray(planes),
        oriented_normals=planes * sign[:, None],
        scales=decoded.scale,
        opacities=decoded.opacity,
        means2d=means2d,
    )


@dataclass
class TileBinning:
    """Per-tile candidate lists sorted by (centre depth, index)"""
    tiles_x: int
    tiles_y: int
    tile_size: int
    tile_offsets: np.ndarray
    tile_splats: np.ndarray
    in_frustum: np.ndarray
    rect: np.ndarray
    radius: np.ndarray

    @property
    def n_tiles(self) -> int:
        return self.tiles_x * self.tiles_y

    @property
    def n_pairs(self) -> int:
        return int(self.tile_splats.shape[0])

    def candidates(self, tile: int) -> np.ndarray:
        return self.tile_splats[self.tile_offsets[tile]:self.tile_offsets[tile + 1]]

    def tiles_of(self, splat: int) -> np.ndarray:
        """Tile ids holding the given splat"""
        pair_tiles = np.repeat(np.arange(self.n_tiles), np.diff(self.tile_offsets))
        return np.unique(pair_tiles[self.tile_splats == splat])


def footprint(projected: ProjectedSplats, camera: CameraView, settings: RasterSettings):
    """Pixel rectangles covered by each splat's cut-off ellipse and low-pass disc

    Returns:
        rect (m, 4) inclusive pixel ranges x0, x1, y0, y1; valid (m,) flags; radius (m,) in pixels
    """
    m = projected.count
    K = np.array([[camera.fx, 0.0, camera.cx],
                  [0.0, camera.fy, camera.cy],
                  [0.0, 0.0, 1.0]])
    M = np.stack([projected.axes_u * projected.scales[:, :1],
                  projected.axes_v * projected.scales[:, 1:],
                  projected.centers], axis=2)
    T = np.einsum('ij,mjk->mik', K, M)
    r2 = settings.footprint_sigma ** 2
    temp = np.array([r2, r2, -1.0])
    distance = np.einsum('k,mk->m', temp, T[:, 2] ** 2)
    valid = (distance < 0.0) & (projected.depths >= settings.near)

    safe = np.where(valid, distance, -1.0)
    f = temp[None, :] / safe[:, None]
    center_x = np.einsum('mk,mk->m', f, T[:, 0] * T[:, 2])
    center_y = np.einsum('mk,mk->m', f, T[:, 1] * T[:, 2])
    half_x = np.sqrt(np.maximum(center_x ** 2 - np.einsum('mk,mk->m', f, T[:, 0] ** 2), 0.0))
    half_y = np.sqrt(np.maximum(center_y ** 2 - np.einsum('mk,mk->m', f, T[:, 1] ** 2), 0.0))

    lp = settings.lowpass_radius
    mx, my = projected.means2d[:, 0], projected.means2d[:, 1]
    lo_x = np.minimum(center_x - half_x, mx - lp)
    hi_x = np.maximum(center_x + half_x, mx + lp)
    lo_y = np.minimum(center_y - half_y, my - lp)
    hi_y = np.maximum(center_y + half_y, my + lp)

    with np.errstate(invalid='ignore'):
        x0 = np.clip(np.ceil(lo_x - 0.5), -1, camera.width)
        x1 = np.clip(np.floor(hi_x - 0.5), -1, camera.width)
        y0 = np.clip(np.ceil(lo_y - 0.5), -1, camera.height)
        y1 = np.clip(np.floor(hi_y - 0.5), -1, camera.height)
    valid &= np.isfinite(lo_x) & np.isfinite(hi_x) & np.isfinite(lo_y) & np.isfinite(hi_y)
    rect = np.zeros((m, 4), dtype=np.int64)
    rect[valid, 0] = np.maximum(x0[valid], 0)
    rect[valid, 1] = np.minimum(x1[valid], camera.width - 1)
    rect[valid, 2] = np.maximum(y0[valid], 0)
    rect[valid, 3] = np.minimum(y1[valid], camera.height - 1)
    valid &= (rect[:, 0] <= rect[:, 1]) & (rect[:, 2] <= rect[:, 3])
    rect[~valid] = 0
    radius = np.where(valid, np.maximum(np.maximum(half_x, half_y), lp), 0.0)
    return rect, valid, radius


def bin_projected(projected: ProjectedSplats, camera: CameraView,
                  settings: Optional[RasterSettings] = None) -> TileBinning:
    settings = settings or RasterSettings()
    ts = settings.tile_size
    tiles_x = (camera.width + ts - 1) // ts
    tiles_y = (camera.height + ts - 1) // ts
    n_tiles = tiles_x * tiles_y

    rect, valid, radius = footprint(projected, camera, settings)
    index = np.flatnonzero(valid)
    tx0, tx1 = rect[index, 0] // ts, rect[index, 1] // ts
    ty0, ty1 = rect[index, 2] // ts, rect[index, 3] // ts
    nx = tx1 - tx0 + 1
    counts = nx * (ty1 - ty0 + 1)

    owner = np.repeat(np.arange(len(index)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(int(counts.sum()), dtype=np.int64) - np.repeat(starts, counts)
    tiles = (ty0[owner] + local // nx[owner]) * tiles_x + tx0[owner] + local % nx[owner]
    splat_ids = index[owner]

    order = np.lexsort((splat_ids, projected.depths[splat_ids], tiles))
    tiles = tiles[order]
    tile_splats = splat_ids[order].astype(np.int64)
    tile_offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    tile_offsets[1:] = np.cumsum(np.bincount(tiles, minlength=n_tiles))

    logger.debug(f"binned {len(index)}/{projected.count} splats into {len(tile_splats)} tile pairs")
    return TileBinning(
        tiles_x=tiles_x,
        tiles_y=tiles_y,
        tile_size=ts,
        tile_offsets=tile_offsets,
        tile_splats=tile_splats,
        in_frustum=valid,
        rect=rect,
        radius=radius,
    )


def bin_splats(splats: Union[SplatSet, DecodedSplats], camera: CameraView,
               settings: Optional[RasterSettings] = None) -> TileBinning:
    """Assign every visible splat to the tiles its footprint touches"""
    decoded = decode_params(splats) if isinstance(splats, SplatSet) else splats
    return bin_projected(project_splats(decoded, camera), camera, settings)
