import logging
import os
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from models.camera import CameraView
from models.sparse_model import CameraIntrinsics, ImageRecord, SparseModel

logger = logging.getLogger(__name__)


def pose_to_qvec(pose: np.ndarray) -> np.ndarray:
    """World-to-camera rotation as a COLMAP (w, x, y, z) quaternion with w >= 0"""
    x, y, z, w = Rotation.from_matrix(np.asarray(pose)[:3, :3]).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


def model_from_cameras(cameras: Sequence[CameraView], points: np.ndarray, colors: np.ndarray,
                       names: Optional[Sequence[str]] = None) -> SparseModel:
    """Sparse model with one PINHOLE sensor per distinct intrinsics"""
    intrinsics: Dict[tuple, CameraIntrinsics] = {}
    records = []
    for i, camera in enumerate(cameras):
        key = (camera.width, camera.height, camera.fx, camera.fy, camera.cx, camera.cy)
        if key not in intrinsics:
            intrinsics[key] = CameraIntrinsics(len(intrinsics) + 1, "PINHOLE", camera.width, camera.height,
                                               camera.fx, camera.fy, camera.cx, camera.cy)
        name = names[i] if names is not None else (camera.name or f"view_{i:03d}.png")
        records.append(ImageRecord(image_id=i + 1, camera_id=intrinsics[key].camera_id, name=name,
                                   qvec=pose_to_qvec(camera.pose), tvec=camera.translation.copy()))
    return SparseModel(intrinsics={c.camera_id: c for c in intrinsics.values()}, image_records=records,
                       points=np.asarray(points, dtype=np.float64).reshape(-1, 3),
                       colors=np.asarray(colors, dtype=np.float64).reshape(-1, 3))


def write_colmap_text(model: SparseModel, model_dir: str) -> str:
    """Write cameras.txt / images.txt / points3D.txt"""
    os.makedirs(model_dir, exist_ok=True)
    with open(os.path.join(model_dir, "cameras.txt"), "w") as f:
        f.write("# Camera list with one line of data per camera:\n")
        f.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for camera_id in sorted(model.intrinsics):
            c = model.intrinsics[camera_id]
            if c.model == "PINHOLE":
                params = [c.fx, c.fy, c.cx, c.cy]
            else:
                params = [c.fx, c.cx, c.cy] + list(c.extra)
            f.write(f"{c.camera_id} {c.model} {c.width} {c.height} " + " ".join(repr(float(p)) for p in params) + "\n")

    with open(os.path.join(model_dir, "images.txt"), "w") as f:
        f.write("# Image list with two lines of data per image:\n")
        f.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        f.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for record in model.image_records:
            values = list(record.qvec) + list(record.tvec)
            f.write(f"{record.image_id} " + " ".join(repr(float(v)) for v in values)
                    + f" {record.camera_id} {record.name}\n")
            f.write("\n")

    with open(os.path.join(model_dir, "points3D.txt"), "w") as f:
        f.write("# 3D point list with one line of data per point:\n")
        f.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        rgb = np.round(np.clip(model.colors, 0.0, 1.0) * 255.0).astype(int)
        for i, (point, color) in enumerate(zip(model.points, rgb), start=1):
            f.write(f"{i} " + " ".join(repr(float(v)) for v in point)
                    + f" {color[0]} {color[1]} {color[2]} 0.0\n")

    logger.info(f"Wrote COLMAP text model ({model.n_images} images, {model.n_points} points) to {model_dir}")
    return model_dir
