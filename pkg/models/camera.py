from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ContractException


@dataclass
class CameraView:
    """Pinhole camera: world-to-camera pose plus intrinsics in pixels"""
    pose: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    name: str = ""

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.fx, self.fy = float(self.fx), float(self.fy)
        self.cx, self.cy = float(self.cx), float(self.cy)
        self.width, self.height = int(self.width), int(self.height)
        self.validate()

    def validate(self, tol: float = 1e-5):
        """Check SE(3) pose and positive focal lengths"""
        if self.pose.shape != (4, 4):
            raise ContractException(f"pose must be 4x4, got {self.pose.shape}")
        if not np.all(np.isfinite(self.pose)):
            raise ContractException("pose contains non-finite values")
        R = self.rotation
        if np.abs(R @ R.T - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise ContractException("pose rotation is not a proper rotation")
        if not np.allclose(self.pose[3], [0.0, 0.0, 0.0, 1.0]):
            raise ContractException("pose last row must be (0, 0, 0, 1)")
        if self.fx <= 0 or self.fy <= 0:
            raise ContractException(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise ContractException("image dimensions must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates"""
        return -self.rotation.T @ self.translation

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (N, 3) into camera coordinates"""
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Project world points; returns pixel coordinates (N, 2) and camera depth (N,)"""
        cam = self.to_camera(np.asarray(points, dtype=np.float64))
        z = cam[:, 2]
        safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
        px = np.stack([self.fx * cam[:, 0] / safe + self.cx,
                       self.fy * cam[:, 1] / safe + self.cy], axis=1)
        return px, z

    def ray_directions(self) -> np.ndarray:
        """Camera-space ray directions with unit z through every pixel centre, (h, w, 3)"""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy, np.ones_like(gx)], axis=-1)

    def scaled(self, factor: float) -> 'CameraView':
        """Same intrinsics, world scaled by factor about the origin"""
        pose = self.pose.copy()
        pose[:3, 3] *= factor
        return CameraView(pose, self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name, 'width': self.width, 'height': self.height,
            'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
            'pose': self.pose.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CameraView':
        """Inverse of to_dict; raises ContractException on missing keys"""
        missing = [key for key in ('width', 'height', 'fx', 'fy', 'pose') if key not in data]
        if missing:
            raise ContractException(f"camera description lacks {', '.join(missing)}")
        return cls(np.asarray(data['pose'], dtype=np.float64), data['fx'], data['fy'],
                   data.get('cx', data['width'] / 2.0), data.get('cy', data['height'] / 2.0),
                   data['width'], data['height'], data.get('name', ''))

    @classmethod
    def look_at(cls, eye: Sequence[float], target: Sequence[float], up: Sequence[float],
                fx: float, fy: float, width: int, height: int,
                cx: Optional[float] = None, cy: Optional[float] = None, name: str = "") -> 'CameraView':
        """Build a camera at eye looking at target (x right, y down, z forward)"""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-9:
            raise ContractException("up vector is parallel to the viewing direction")
        right /= norm
        down = np.cross(forward, right)
        R = np.stack([right, down, forward], axis=0)
        pose = np.eye(4)
        pose[:3, :3] = R
        pose[:3, 3] = -R @ eye
        return cls(pose, fx, fy,
                   width / 2.0 if cx is None else cx,
                   height / 2.0 if cy is None else cy,
                   width, height, name)


@dataclass
class TrainingView:
    """One training input: image, binary object mask and camera"""
    camera: CameraView
    image: np.ndarray
    mask: np.ndarray
    index: int
    name: str = ""
    defect: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        h, w = self.camera.shape
        if self.image.shape != (h, w, 3):
            raise ContractException(
                f"view {self.index}: image shape {self.image.shape} does not match camera {(h, w, 3)}")
        if self.mask.shape != (h, w):
            raise ContractException(
                f"view {self.index}: mask shape {self.mask.shape} does not match camera {(h, w)}")
        if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
            raise ContractException(f"view {self.index}: mask must be binary")

    @property
    def has_object(self) -> bool:
        return bool(self.mask.any())

    def without_mask(self) -> 'TrainingView':
        """Same view with the mask replaced by all ones"""
        return TrainingView(self.camera, self.image, np.ones_like(self.mask), self.index, self.name)
