"""
Splat representation: structure-of-arrays storage of 2D Gaussian discs
"""

from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from core.exceptions import ContractException, ParameterCorruptionException

SH_C0 = 0.28209479177387814

PARAMETER_FIELDS = ("position", "rotation", "log_scale", "opacity_logit", "sh_coeffs")
STAT_FIELDS = ("grad_accum", "grad_count", "seen_since_prune", "max_radius")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))

def inverse_sigmoid(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))

def sh_count(degree: int) -> int:
    return (degree + 1) ** 2

def rgb_to_sh_dc(rgb: np.ndarray) -> np.ndarray:
    """Degree-0 coefficient whose constant evaluation reproduces rgb"""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0

def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(norm, 1e-30)

def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z), shape (m, 4), to rotation matrices (m, 3, 3)"""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class SplatSet:
    """Learnable 2D Gaussian discs plus per-splat training statistics

    Parameters are stored unconstrained: scales as logs, opacities as logits,
    rotations as (w, x, y, z) quaternions renormalized after every update.
    """
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh_coeffs: np.ndarray
    grad_accum: Optional[np.ndarray] = None
    grad_count: Optional[np.ndarray] = None
    seen_since_prune: Optional[np.ndarray] = None
    max_radius: Optional[np.ndarray] = None

    def __post_init__(self):
        m = self.position.shape[0]
        if self.grad_accum is None:
            self.grad_accum = np.zeros(m, dtype=np.float64)
        if self.grad_count is None:
            self.grad_count = np.zeros(m, dtype=np.int64)
        if self.seen_since_prune is None:
            self.seen_since_prune = np.zeros(m, dtype=bool)
        if self.max_radius is None:
            self.max_radius = np.zeros(m, dtype=np.float64)
        self.check_consistency()

    def check_consistency(self):
        """All per-splat arrays share the splat count"""
        m = self.position.shape[0]
        expected = {
            'position': (m, 3),
            'rotation': (m, 4),
            'log_scale': (m, 2),
            'opacity_logit': (m,),
            'grad_accum': (m,),
            'grad_count': (m,),
            'seen_since_prune': (m,),
            'max_radius': (m,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ContractException(f"{name} has shape {actual}, expected {shape}")
        sh = self.sh_coeffs
        if sh.ndim != 3 or sh.shape[0] != m or sh.shape[2] != 3:
            raise ContractException(f"sh_coeffs has shape {sh.shape}, expected ({m}, C, 3)")
        degree = int(round(np.sqrt(sh.shape[1]))) - 1
        if sh_count(degree) != sh.shape[1]:
            raise ContractException(f"sh_coeffs holds {sh.shape[1]} coefficients, not a square count")

    @property
    def count(self) -> int:
        return int(self.position.shape[0])

    def __len__(self) -> int:
        return self.count

    @property
    def dtype(self) -> np.dtype:
        return self.position.dtype

    @property
    def sh_degree(self) -> int:
        """Highest SH degree the coefficient array can hold"""
        return int(round(np.sqrt(self.sh_coeffs.shape[1]))) - 1

    @classmethod
    def empty(cls, sh_degree: int = 3, dtype=np.float64) -> 'SplatSet':
        return cls(
            position=np.zeros((0, 3), dtype=dtype),
            rotation=np.zeros((0, 4), dtype=dtype),
            log_scale=np.zeros((0, 2), dtype=dtype),
            opacity_logit=np.zeros((0,), dtype=dtype),
            sh_coeffs=np.zeros((0, sh_count(sh_degree), 3), dtype=dtype),
        )

    @classmethod
    def from_decoded(cls, position: np.ndarray, scale: np.ndarray, opacity: np.ndarray,
                     rgb: np.ndarray, rotation: Optional[np.ndarray] = None,
                     sh_degree: int = 3, dtype=np.float64) -> 'SplatSet':
        """Build a set from activated values (positive scales, opacities in (0,1), rgb colours)"""
        position = np.asarray(position, dtype=np.float64).reshape(-1, 3)
        m = position.shape[0]
        if rotation is None:
            rotation = np.tile([1.0, 0.0, 0.0, 0.0], (m, 1))
        scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (m, 2))
        opacity = np.broadcast_to(np.asarray(opacity, dtype=np.float64), (m,))
        sh = np.zeros((m, sh_count(sh_degree), 3), dtype=np.float64)
        sh[:, 0, :] = rgb_to_sh_dc(np.broadcast_to(rgb, (m, 3)))
        return cls(
            position=position.astype(dtype),
            rotation=normalize_quaternions(np.asarray(rotation, dtype=np.float64)).astype(dtype),
            log_scale=np.log(scale).astype(dtype),
            opacity_logit=inverse_sigmoid(opacity).astype(dtype),
            sh_coeffs=sh.astype(dtype),
        )

    def copy(self) -> 'SplatSet':
        return SplatSet(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def select(self, index: np.ndarray) -> 'SplatSet':
        """Subset (boolean mask or integer index); survivors keep their exact values"""
        return SplatSet(**{f.name: getattr(self, f.name)[index].copy() for f in fields(self)})

    def concatenate(self, other: 'SplatSet') -> 'SplatSet':
        if other.sh_coeffs.shape[1] != self.sh_coeffs.shape[1]:
            raise ContractException("cannot concatenate sets with different SH sizes")
        return SplatSet(**{
            f.name: np.concatenate([getattr(self, f.name), getattr(other, f.name).astype(getattr(self, f.name).dtype)])
            for f in fields(self)
        })

    def astype(self, dtype) -> 'SplatSet':
        values = {name: getattr(self, name).astype(dtype) for name in PARAMETER_FIELDS}
        values.update({name: getattr(self, name).copy() for name in STAT_FIELDS})
        return SplatSet(**values)

    def reset_stats(self):
        """Zero the densification gradient statistics"""
        self.grad_accum[:] = 0.0
        self.grad_count[:] = 0
        self.max_radius[:] = 0.0

    def parameters(self) -> dict:
        return {name: getattr(self, name) for name in PARAMETER_FIELDS}

    def equals(self, other: 'SplatSet', fields_to_check: Sequence[str] = PARAMETER_FIELDS + STAT_FIELDS) -> bool:
        """Bit-exact comparison of the given fields"""
        for name in fields_to_check:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or a.dtype != b.dtype or a.tobytes() != b.tobytes():
                return False
        return True


@dataclass
class DecodedSplats:
    """Activated per-splat geometry"""
    position: np.ndarray
    quaternion: np.ndarray
    frames: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray

    @property
    def t_u(self) -> np.ndarray:
        return self.frames[:, :, 0]

    @property
    def t_v(self) -> np.ndarray:
        return self.frames[:, :, 1]

    @property
    def normal(self) -> np.ndarray:
        return self.frames[:, :, 2]


def decode_params(raw: SplatSet) -> DecodedSplats:
    """Map stored parameters to positions, orthonormal frames, scales and opacities"""
    raw.check_consistency()
    for name in PARAMETER_FIELDS:
        values = getattr(raw, name)
        bad = ~np.isfinite(values).all(axis=tuple(range(1, values.ndim)))
        if bad.any():
            raise ParameterCorruptionException(
                f"non-finite {name} for splat {int(np.flatnonzero(bad)[0])}")
    q = np.asarray(raw.rotation, dtype=np.float64)
    zero = np.linalg.norm(q, axis=1) == 0.0
    if zero.any():
        raise ParameterCorruptionException(f"zero quaternion for splat {int(np.flatnonzero(zero)[0])}")
    q = normalize_quaternions(q)
    return DecodedSplats(
        position=np.asarray(raw.position, dtype=np.float64),
        quaternion=q,
        frames=quaternion_to_matrix(q),
        scale=np.exp(np.asarray(raw.log_scale, dtype=np.float64)),
        opacity=sigmoid(np.asarray(raw.opacity_logit, dtype=np.float64)),
    )
