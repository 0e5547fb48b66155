import logging
from typing import Union

import numpy as np
from scipy.spatial import cKDTree

from core.exceptions import UndefinedMetricException
from models.mesh import TriangleMesh

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 100000


def as_points(data: Union[np.ndarray, TriangleMesh], samples: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """Point array as is; meshes are sampled uniformly over their surface"""
    if isinstance(data, TriangleMesh):
        return data.sample_surface(samples, seed=seed)
    return np.asarray(data, dtype=np.float64).reshape(-1, 3)


def nearest_distances(source: np.ndarray, target: np.ndarray, workers: int = -1) -> np.ndarray:
    """Distance from every source point to its nearest target point"""
    distances, _ = cKDTree(target).query(source, k=1, workers=workers)
    return distances


def chamfer_distance(a: Union[np.ndarray, TriangleMesh], b: Union[np.ndarray, TriangleMesh],
                     samples: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Mean of the two directed mean nearest-neighbour distances"""
    a = as_points(a, samples, seed)
    b = as_points(b, samples, seed)
    if len(a) == 0 or len(b) == 0:
        raise UndefinedMetricException("chamfer distance is undefined for an empty point set")
    accuracy = float(nearest_distances(a, b).mean())
    completeness = float(nearest_distances(b, a).mean())
    logger.debug(f"chamfer: accuracy {accuracy:.6g}, completeness {completeness:.6g}")
    return 0.5 * (accuracy + completeness)
