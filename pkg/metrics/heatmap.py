import logging
import os
from typing import List, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from ingest.views import write_image
from models.camera import TrainingView
from models.splats import SplatSet

logger = logging.getLogger(__name__)

RED = np.array([1.0, 0.0, 0.0])


def occlusion_overlay(view: TrainingView, positions: np.ndarray, sigma: float = 2.0,
                      strength: float = 0.8) -> np.ndarray:
    """Ground-truth image with the projected splat centres blended in as a red density"""
    camera = view.camera
    density = np.zeros(camera.shape)
    if len(positions):
        px, z = camera.project(positions)
        col = np.floor(px[:, 0]).astype(np.int64)
        row = np.floor(px[:, 1]).astype(np.int64)
        ok = (z > 0) & (col >= 0) & (col < camera.width) & (row >= 0) & (row < camera.height)
        np.add.at(density, (row[ok], col[ok]), 1.0)
        density = gaussian_filter(density, sigma)
        if density.max() > 0:
            density /= density.max()
    weight = strength * density[..., None]
    return view.image * (1.0 - weight) + RED * weight


def write_heatmaps(splats: SplatSet, indices: np.ndarray, views: Sequence[TrainingView],
                   out_dir: str) -> List[str]:
    """One PNG per view marking where the given (occluded) splats sit"""
    os.makedirs(out_dir, exist_ok=True)
    positions = np.asarray(splats.position, dtype=np.float64)[indices]
    paths = []
    for view in views:
        overlay = occlusion_overlay(view, positions)
        stem = os.path.splitext(os.path.basename(view.name))[0] or f"view_{view.index:03d}"
        path = os.path.join(out_dir, f"{stem}_occluded.png")
        write_image(overlay, path)
        paths.append(path)
    logger.info(f"Wrote {len(paths)} occlusion heatmaps to {out_dir}")
    return paths
