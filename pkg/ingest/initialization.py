import logging
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from core.exceptions import InitializationException
from models.camera import CameraView
from models.sparse_model import SparseModel
from models.splats import SplatSet

logger = logging.getLogger(__name__)

INITIAL_OPACITY = 0.1
NEIGHBOURS = 3
SINGLE_POINT_SCALE_RATIO = 0.01


def scene_extent(cameras: Sequence[CameraView]) -> float:
    """1.1 x the largest distance of a camera centre from the mean centre"""
    if not cameras:
        return 1.0
    centers = np.stack([camera.center for camera in cameras])
    radius = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) * 1.1
    if radius <= 0.0:
        logger.debug("cameras share one centre, using unit scene extent")
        return 1.0
    return radius


def nearest_neighbour_scale(points: np.ndarray, extent: float) -> np.ndarray:
    """Mean distance to the three nearest other points, per point"""
    p = points.shape[0]
    if p == 1:
        return np.array([SINGLE_POINT_SCALE_RATIO * extent])
    k = min(NEIGHBOURS, p - 1)
    dist, _ = cKDTree(points).query(points, k=k + 1)
    mean = dist[:, 1:].mean(axis=1)
    return np.maximum(mean, np.sqrt(1e-7))


def init_splats(model: SparseModel, sh_degree: int = 3, dtype=np.float64,
                extent: Optional[float] = None) -> SplatSet:
    """One identity-oriented isotropic splat per sparse point"""
    if model.n_points == 0:
        raise InitializationException("Sparse model has no points; cannot initialize splats")
    if extent is None:
        extent = scene_extent(model.cameras)
    scale = nearest_neighbour_scale(model.points, extent)
    splats = SplatSet.from_decoded(
        position=model.points,
        scale=np.stack([scale, scale], axis=1),
        opacity=INITIAL_OPACITY,
        rgb=model.colors,
        sh_degree=sh_degree,
        dtype=dtype,
    )
    logger.info(f"Initialized {splats.count} splats (scene extent {extent:.3f})")
    return splats
