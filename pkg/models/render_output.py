from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from core.exceptions import ContractException


@dataclass
class RenderOutput:
    """Per-view render buffers and per-splat visibility flags"""
    color: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    expected_depth: np.ndarray
    normal: np.ndarray
    distortion: np.ndarray
    final_transmittance: np.ndarray
    contributed: np.ndarray
    in_frustum: np.ndarray
    max_radius: np.ndarray
    # forward state reused by the backward pass
    context: Optional[Any] = field(default=None, repr=False, compare=False)

    @property
    def shape(self):
        return self.alpha.shape

    @property
    def splat_count(self) -> int:
        return int(self.contributed.shape[0])


@dataclass
class PixelGradients:
    """Upstream adjoints of a scalar loss with respect to the render buffers"""
    color: np.ndarray
    alpha: np.ndarray
    expected_depth: np.ndarray
    normal: np.ndarray
    distortion: np.ndarray

    @classmethod
    def zeros(cls, height: int, width: int) -> 'PixelGradients':
        return cls(
            color=np.zeros((height, width, 3)),
            alpha=np.zeros((height, width)),
            expected_depth=np.zeros((height, width)),
            normal=np.zeros((height, width, 3)),
            distortion=np.zeros((height, width)),
        )

    def check_shape(self, height: int, width: int):
        expected = {
            'color': (height, width, 3),
            'alpha': (height, width),
            'expected_depth': (height, width),
            'normal': (height, width, 3),
            'distortion': (height, width),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ContractException(f"{name} adjoint has shape {actual}, expected {shape}")

    def __add__(self, other: 'PixelGradients') -> 'PixelGradients':
        return PixelGradients(
            color=self.color + other.color,
            alpha=self.alpha + other.alpha,
            expected_depth=self.expected_depth + other.expected_depth,
            normal=self.normal + other.normal,
            distortion=self.distortion + other.distortion,
        )


@dataclass
class SplatGradients:
    """Loss gradients for every stored splat parameter"""
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh_coeffs: np.ndarray
    # norm of the gradient w.r.t. the projected centre in NDC units
    screen: np.ndarray

    @classmethod
    def zeros_like(cls, splats) -> 'SplatGradients':
        return cls(
            position=np.zeros(splats.position.shape),
            rotation=np.zeros(splats.rotation.shape),
            log_scale=np.zeros(splats.log_scale.shape),
            opacity_logit=np.zeros(splats.opacity_logit.shape),
            sh_coeffs=np.zeros(splats.sh_coeffs.shape),
            screen=np.zeros(splats.count),
        )

    def as_dict(self) -> dict:
        return {
            'position': self.position,
            'rotation': self.rotation,
            'log_scale': self.log_scale,
            'opacity_logit': self.opacity_logit,
            'sh_coeffs': self.sh_coeffs,
        }
