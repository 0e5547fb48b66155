from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from models.camera import CameraView
from models.splats import quaternion_to_matrix


@dataclass
class CameraIntrinsics:
    """One declared sensor of a sparse model"""
    camera_id: int
    model: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    # distortion parameters are kept for round-tripping but ignored by rendering
    extra: List[float] = field(default_factory=list)


@dataclass
class ImageRecord:
    """Registered image: world-to-camera pose, sensor reference, file name"""
    image_id: int
    camera_id: int
    name: str
    qvec: np.ndarray
    tvec: np.ndarray

    def pose(self) -> np.ndarray:
        q = np.asarray(self.qvec, dtype=np.float64)
        q = q / np.linalg.norm(q)
        pose = np.eye(4)
        pose[:3, :3] = quaternion_to_matrix(q[None])[0]
        pose[:3, 3] = self.tvec
        return pose


@dataclass
class SparseModel:
    """Structure-from-motion output: sensors, registered images and the sparse cloud"""
    intrinsics: Dict[int, CameraIntrinsics]
    image_records: List[ImageRecord]
    points: np.ndarray
    colors: np.ndarray

    @property
    def n_images(self) -> int:
        return len(self.image_records)

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    @property
    def cameras(self) -> List[CameraView]:
        """One CameraView per image record, in record order"""
        views = []
        for record in self.image_records:
            sensor = self.intrinsics[record.camera_id]
            views.append(CameraView(
                pose=record.pose(),
                fx=sensor.fx, fy=sensor.fy, cx=sensor.cx, cy=sensor.cy,
                width=sensor.width, height=sensor.height, name=record.name,
            ))
        return views
