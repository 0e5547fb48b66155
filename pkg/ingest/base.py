import logging
import os
from abc import ABC, abstractmethod
from typing import Dict, List, Sequence

import numpy as np

from core.exceptions import IngestException, UnsupportedCameraModelException
from models.sparse_model import CameraIntrinsics, ImageRecord, SparseModel

# model id -> (name, parameter count), as laid out by COLMAP
CAMERA_MODELS = {
    0: ("SIMPLE_PINHOLE", 3),
    1: ("PINHOLE", 4),
    2: ("SIMPLE_RADIAL", 4),
    3: ("RADIAL", 5),
    4: ("OPENCV", 8),
    5: ("OPENCV_FISHEYE", 8),
    6: ("FULL_OPENCV", 12),
    7: ("FOV", 5),
    8: ("SIMPLE_RADIAL_FISHEYE", 4),
    9: ("RADIAL_FISHEYE", 5),
    10: ("THIN_PRISM_FISHEYE", 12),
}
CAMERA_MODEL_IDS = {name: model_id for model_id, (name, _) in CAMERA_MODELS.items()}
SUPPORTED_MODELS = ("SIMPLE_PINHOLE", "PINHOLE", "SIMPLE_RADIAL")


class BaseModelReader(ABC):
    """Base class for sparse-model readers"""

    extension = ""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    @abstractmethod
    def get_name(self) -> str:
        """Get reader name"""
        pass

    @abstractmethod
    def read_cameras(self, path: str) -> Dict[int, CameraIntrinsics]:
        pass

    @abstractmethod
    def read_images(self, path: str) -> List[ImageRecord]:
        pass

    @abstractmethod
    def read_points(self, path: str):
        """Return (positions (p, 3), colours (p, 3) in [0, 1])"""
        pass

    def file_paths(self, model_dir: str) -> Dict[str, str]:
        return {
            name: os.path.join(model_dir, f"{name}{self.extension}")
            for name in ("cameras", "images", "points3D")
        }

    def can_read(self, model_dir: str) -> bool:
        return all(os.path.exists(p) for p in self.file_paths(model_dir).values())

    def read(self, model_dir: str) -> SparseModel:
        """Parse a model directory into a validated SparseModel"""
        paths = self.file_paths(model_dir)
        for path in paths.values():
            if not os.path.exists(path):
                raise IngestException(f"Missing sparse-model file: {path}")
        intrinsics = self.read_cameras(paths["cameras"])
        records = self.read_images(paths["images"])
        points, colors = self.read_points(paths["points3D"])
        model = build_model(intrinsics, records, points, colors)
        self.logger.info(
            f"{self.get_name()}: {len(intrinsics)} cameras, {model.n_images} images, {model.n_points} points")
        return model


def intrinsics_from_params(camera_id: int, model: str, width: int, height: int,
                           params: Sequence[float]) -> CameraIntrinsics:
    """Map COLMAP camera parameters to pinhole intrinsics"""
    params = [float(p) for p in params]
    if model not in SUPPORTED_MODELS:
        raise UnsupportedCameraModelException(f"Camera {camera_id}: unsupported camera model {model}")
    expected = CAMERA_MODELS[CAMERA_MODEL_IDS[model]][1]
    if len(params) != expected:
        raise IngestException(f"Camera {camera_id}: {model} expects {expected} parameters, got {len(params)}")
    if model == "PINHOLE":
        fx, fy, cx, cy = params
        extra = []
    else:
        fx = fy = params[0]
        cx, cy = params[1], params[2]
        extra = params[3:]
    return CameraIntrinsics(camera_id, model, int(width), int(height), fx, fy, cx, cy, extra)


def build_model(intrinsics: Dict[int, CameraIntrinsics], records: List[ImageRecord],
                points: np.ndarray, colors: np.ndarray) -> SparseModel:
    for record in records:
        if record.camera_id not in intrinsics:
            raise IngestException(
                f"Image {record.image_id} ({record.name}) references undeclared camera {record.camera_id}")
        if not (np.all(np.isfinite(record.qvec)) and np.all(np.isfinite(record.tvec))):
            raise IngestException(f"Image {record.image_id} has a non-finite pose")
        if np.linalg.norm(record.qvec) == 0.0:
            raise IngestException(f"Image {record.image_id} has a zero rotation quaternion")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        raise IngestException("Sparse point cloud contains non-finite positions")
    records = sorted(records, key=lambda r: r.name)
    return SparseModel(intrinsics=intrinsics, image_records=records,
                       points=points, colors=np.clip(colors, 0.0, 1.0))
