"""
Depth-distortion and normal-consistency regularizers
"""

from typing import Tuple

import numpy as np

from rasterizer.kernels import pair_distortion

NORMAL_EPS = 1e-20


def depth_distortion(weights: np.ndarray, depths: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Per-ray distortion sum_{i<j} w_i w_j |z_i - z_j|

    Returns:
        value, gradient w.r.t. the weights, gradient w.r.t. the depths
    """
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    depths = np.ascontiguousarray(depths, dtype=np.float64)
    value, grad_w, grad_z = pair_distortion(weights, depths)
    return float(value), grad_w, grad_z


def depth_distortion_map(distortion: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean of a rendered distortion map and its (uniform) adjoint"""
    return float(distortion.mean()), np.full(distortion.shape, 1.0 / distortion.size)


def normal_consistency(weights: np.ndarray, normals: np.ndarray,
                       surface_normal: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Per-ray sum_i w_i (1 - n_i . N)

    Returns:
        value and gradients w.r.t. weights (k,), normals (k, 3) and N (3,)
    """
    weights = np.asarray(weights, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    N = np.asarray(surface_normal, dtype=np.float64)
    dots = normals @ N
    value = float(np.sum(weights * (1.0 - dots)))
    return value, 1.0 - dots, -weights[:, None] * N[None, :], -(weights[:, None] * normals).sum(axis=0)


def depth_normals(depth: np.ndarray, rays: np.ndarray):
    """Surface normals from central differences of the back-projected depth map

    Returns:
        normals (h, w, 3), valid (h, w) and the unnormalized cross products
    """
    h, w = depth.shape
    points = depth[..., None] * rays
    normals = np.zeros((h, w, 3))
    cross = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    if h < 3 or w < 3:
        return normals, valid, cross
    a = points[2:, 1:-1] - points[:-2, 1:-1]
    b = points[1:-1, 2:] - points[1:-1, :-2]
    c = np.cross(a, b)
    norm2 = np.sum(c * c, axis=-1)
    ok = norm2 > NORMAL_EPS
    inner = np.zeros_like(c)
    inner[ok] = c[ok] / np.sqrt(norm2[ok])[:, None]
    normals[1:-1, 1:-1] = inner
    cross[1:-1, 1:-1] = c
    valid[1:-1, 1:-1] = ok
    return normals, valid, cross


def normal_consistency_map(alpha: np.ndarray, normal_map: np.ndarray, depth: np.ndarray,
                           rays: np.ndarray):
    """Map-level normal consistency over pixels with a depth normal

    Equals (1/hw) sum over valid pixels of sum_i w_i (1 - n_i . N), using
    sum_i w_i = alpha and sum_i w_i n_i = normal_map.

    Returns:
        value, gradient w.r.t. alpha, w.r.t. the normal map, w.r.t. the depth map
    """
    h, w = alpha.shape
    scale = 1.0 / (h * w)
    N, valid, cross = depth_normals(depth, rays)
    v = valid.astype(np.float64)
    dots = np.sum(normal_map * N, axis=-1)
    value = float(np.sum(v * (alpha - dots)) * scale)
    grad_alpha = v * scale
    grad_normal = -N * (v * scale)[..., None]

    # back through N = c / |c|, c = a x b
    grad_N = -normal_map * (v * scale)[..., None]
    norm = np.sqrt(np.sum(cross * cross, axis=-1))
    safe = np.where(valid, norm, 1.0)
    grad_c = (grad_N - N * np.sum(N * grad_N, axis=-1, keepdims=True)) / safe[..., None]
    grad_c[~valid] = 0.0
    points = depth[..., None] * rays
    grad_points = np.zeros((h, w, 3))
    if h >= 3 and w >= 3:
        gc = grad_c[1:-1, 1:-1]
        a = points[2:, 1:-1] - points[:-2, 1:-1]
        b = points[1:-1, 2:] - points[1:-1, :-2]
        grad_a = np.cross(b, gc)
        grad_b = np.cross(gc, a)
        grad_points[2:, 1:-1] += grad_a
        grad_points[:-2, 1:-1] -= grad_a
        grad_points[1:-1, 2:] += grad_b
        grad_points[1:-1, :-2] -= grad_b
    grad_depth = np.sum(grad_points * rays, axis=-1)
    return value, grad_alpha, grad_normal, grad_depth
