import logging
from typing import Sequence

import numpy as np

from models.camera import TrainingView
from models.mesh import TriangleMesh

logger = logging.getLogger(__name__)


def cull_mesh_by_masks(mesh: TriangleMesh, views: Sequence[TrainingView]) -> TriangleMesh:
    """Drop triangles whose centroid falls outside the object mask in every view that sees it

    A view sees a centroid when it projects inside the image in front of the
    camera. Triangles no view sees are kept.
    """
    if mesh.is_empty:
        return mesh
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    seen = np.zeros(len(centroids), dtype=bool)
    inside = np.zeros(len(centroids), dtype=bool)
    for view in views:
        camera = view.camera
        px, z = camera.project(centroids)
        col = np.floor(px[:, 0]).astype(np.int64)
        row = np.floor(px[:, 1]).astype(np.int64)
        visible = (z > 0) & (col >= 0) & (col < camera.width) & (row >= 0) & (row < camera.height)
        hit = np.zeros(len(centroids), dtype=bool)
        hit[visible] = view.mask[row[visible], col[visible]] > 0.5
        seen |= visible
        inside |= hit
    keep = inside | ~seen
    logger.info(f"Mask culling kept {int(keep.sum())}/{len(keep)} triangles")
    return mesh.submesh(keep)
