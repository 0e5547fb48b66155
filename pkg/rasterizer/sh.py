"""
Real spherical-harmonic colour evaluation up to degree 3 and its derivatives
"""

from typing import Tuple

import numpy as np

from models.splats import SH_C0

SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for directions (N, 3); returns (N, (degree+1)^2)"""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = dirs.shape[0]
    Y = np.zeros((n, (degree + 1) ** 2))
    Y[:, 0] = SH_C0
    if degree > 0:
        Y[:, 1] = -SH_C1 * y
        Y[:, 2] = SH_C1 * z
        Y[:, 3] = -SH_C1 * x
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        Y[:, 4] = SH_C2[0] * x * y
        Y[:, 5] = SH_C2[1] * y * z
        Y[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
        Y[:, 7] = SH_C2[3] * x * z
        Y[:, 8] = SH_C2[4] * (xx - yy)
    if degree > 2:
        Y[:, 9] = SH_C3[0] * y * (3 * xx - yy)
        Y[:, 10] = SH_C3[1] * x * y * z
        Y[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        Y[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        Y[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        Y[:, 14] = SH_C3[5] * z * (xx - yy)
        Y[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
    return Y


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Partial derivatives of each basis polynomial w.r.t. (x, y, z); returns (N, C, 3)"""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = dirs.shape[0]
    J = np.zeros((n, (degree + 1) ** 2, 3))
    if degree > 0:
        J[:, 1, 1] = -SH_C1
        J[:, 2, 2] = SH_C1
        J[:, 3, 0] = -SH_C1
    if degree > 1:
        J[:, 4, 0] = SH_C2[0] * y
        J[:, 4, 1] = SH_C2[0] * x
        J[:, 5, 1] = SH_C2[1] * z
        J[:, 5, 2] = SH_C2[1] * y
        J[:, 6, 0] = -2 * SH_C2[2] * x
        J[:, 6, 1] = -2 * SH_C2[2] * y
        J[:, 6, 2] = 4 * SH_C2[2] * z
        J[:, 7, 0] = SH_C2[3] * z
        J[:, 7, 2] = SH_C2[3] * x
        J[:, 8, 0] = 2 * SH_C2[4] * x
        J[:, 8, 1] = -2 * SH_C2[4] * y
    if degree > 2:
        xx, yy, zz = x * x, y * y, z * z
        J[:, 9, 0] = 6 * SH_C3[0] * x * y
        J[:, 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        J[:, 10, 0] = SH_C3[1] * y * z
        J[:, 10, 1] = SH_C3[1] * x * z
        J[:, 10, 2] = SH_C3[1] * x * y
        J[:, 11, 0] = -2 * SH_C3[2] * x * y
        J[:, 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        J[:, 11, 2] = 8 * SH_C3[2] * y * z
        J[:, 12, 0] = -6 * SH_C3[3] * x * z
        J[:, 12, 1] = -6 * SH_C3[3] * y * z
        J[:, 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        J[:, 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        J[:, 13, 1] = -2 * SH_C3[4] * x * y
        J[:, 13, 2] = 8 * SH_C3[4] * x * z
        J[:, 14, 0] = 2 * SH_C3[5] * x * z
        J[:, 14, 1] = -2 * SH_C3[5] * y * z
        J[:, 14, 2] = SH_C3[5] * (xx - yy)
        J[:, 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        J[:, 15, 1] = -6 * SH_C3[6] * x * y
    return J


def eval_sh_colors(coeffs: np.ndarray, dirs: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Colours for many splats

    Args:
        coeffs: (N, C, 3) coefficients, C >= (degree+1)^2
        dirs: (N, 3) unit viewing directions
        degree: number of active bands minus one

    Returns:
        rgb (N, 3) clamped below at 0, and the (N, 3) mask of unclamped channels
    """
    used = (degree + 1) ** 2
    Y = sh_basis(dirs, degree)
    raw = np.einsum('nc,nck->nk', Y, np.asarray(coeffs, dtype=np.float64)[:, :used]) + 0.5
    passed = raw > 0.0
    return np.where(passed, raw, 0.0), passed


def eval_sh_color(coeffs: np.ndarray, view_dir: np.ndarray, degree: int) -> np.ndarray:
    """Colour of one splat seen along view_dir"""
    rgb, _ = eval_sh_colors(np.asarray(coeffs)[None], np.asarray(view_dir, dtype=np.float64)[None], degree)
    return rgb[0]


def sh_backward(coeffs: np.ndarray, dirs: np.ndarray, degree: int, passed: np.ndarray,
                grad_rgb: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Adjoint of eval_sh_colors

    Returns:
        gradient w.r.t. the coefficients (N, C, 3) (zero beyond the active bands) and
        w.r.t. the unnormalized direction components (N, 3)
    """
    used = (degree + 1) ** 2
    g = np.where(passed, grad_rgb, 0.0)
    grad_coeffs = np.zeros(coeffs.shape)
    grad_coeffs[:, :used] = sh_basis(dirs, degree)[:, :, None] * g[:, None, :]
    # (N, C): how much each basis value matters
    weight = np.einsum('nck,nk->nc', np.asarray(coeffs, dtype=np.float64)[:, :used], g)
    grad_dirs = np.einsum('nc,ncd->nd', weight, sh_basis_jacobian(dirs, degree))
    return grad_coeffs, grad_dirs
