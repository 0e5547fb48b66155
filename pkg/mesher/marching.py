import logging

import numpy as np
from scipy.ndimage import map_coordinates
from skimage import measure

from models.mesh import TriangleMesh, TsdfVolume

logger = logging.getLogger(__name__)


def cube_mask(observed: np.ndarray) -> np.ndarray:
    """True at (i, j, k) when all eight corners of the cube starting there are observed"""
    mask = np.zeros_like(observed, dtype=bool)
    valid = observed[:-1, :-1, :-1].copy()
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                valid &= observed[di:di + observed.shape[0] - 1,
                                  dj:dj + observed.shape[1] - 1,
                                  dk:dk + observed.shape[2] - 1]
    mask[:-1, :-1, :-1] = valid
    return mask


def marching_cubes(volume: TsdfVolume) -> TriangleMesh:
    """Zero isosurface of the fused TSDF; unobserved voxels never produce surface"""
    if min(volume.dims) < 2:
        return TriangleMesh.empty()
    observed = volume.observed
    mask = cube_mask(observed)
    values = volume.tsdf[observed]
    if not mask.any() or values.min() > 0.0 or values.max() < 0.0:
        return TriangleMesh.empty()
    try:
        verts, faces, _, _ = measure.marching_cubes(volume.tsdf, level=0.0, mask=mask, allow_degenerate=False)
    except (ValueError, RuntimeError) as e:
        logger.debug(f"marching cubes produced no surface: {e}")
        return TriangleMesh.empty()
    if len(faces) == 0:
        return TriangleMesh.empty()

    colors = np.stack([
        map_coordinates(volume.color[..., c].astype(np.float64), verts.T, order=1, mode='nearest')
        for c in range(3)
    ], axis=1)
    mesh = TriangleMesh(volume.voxel_centers(verts), faces, np.clip(colors, 0.0, 1.0))
    logger.info(f"Extracted mesh with {len(mesh.vertices)} vertices and {len(mesh.triangles)} triangles")
    return mesh
