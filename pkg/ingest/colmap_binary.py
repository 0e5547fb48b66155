import struct
from typing import BinaryIO, Dict, List

import numpy as np

from core.exceptions import IngestException
from ingest.base import CAMERA_MODELS, BaseModelReader, intrinsics_from_params
from models.sparse_model import CameraIntrinsics, ImageRecord


def read_next_bytes(fid: BinaryIO, num_bytes: int, format_char_sequence: str):
    """Read and unpack little-endian values, failing cleanly on truncation"""
    offset = fid.tell()
    data = fid.read(num_bytes)
    if len(data) != num_bytes:
        raise IngestException(f"{getattr(fid, 'name', 'stream')}: truncated at byte {offset}")
    return struct.unpack("<" + format_char_sequence, data)


class ColmapBinaryReader(BaseModelReader):
    """Reader for cameras.bin / images.bin / points3D.bin"""

    extension = ".bin"

    def get_name(self) -> str:
        return "colmap_binary"

    def read_cameras(self, path: str) -> Dict[int, CameraIntrinsics]:
        cameras = {}
        with open(path, "rb") as fid:
            num_cameras = read_next_bytes(fid, 8, "Q")[0]
            for _ in range(num_cameras):
                camera_id, model_id, width, height = read_next_bytes(fid, 24, "iiQQ")
                if model_id not in CAMERA_MODELS:
                    raise IngestException(f"{path}: unknown camera model id {model_id}")
                model_name, num_params = CAMERA_MODELS[model_id]
                params = read_next_bytes(fid, 8 * num_params, "d" * num_params)
                cameras[camera_id] = intrinsics_from_params(camera_id, model_name, width, height, params)
        return cameras

    def read_images(self, path: str) -> List[ImageRecord]:
        records = []
        with open(path, "rb") as fid:
            num_images = read_next_bytes(fid, 8, "Q")[0]
            for _ in range(num_images):
                props = read_next_bytes(fid, 64, "idddddddi")
                name = b""
                char = read_next_bytes(fid, 1, "c")[0]
                while char != b"\x00":
                    name += char
                    char = read_next_bytes(fid, 1, "c")[0]
                num_points2d = read_next_bytes(fid, 8, "Q")[0]
                # observations are not needed for splat training
                read_next_bytes(fid, 24 * num_points2d, "ddq" * num_points2d)
                records.append(ImageRecord(
                    image_id=props[0],
                    qvec=np.array(props[1:5]),
                    tvec=np.array(props[5:8]),
                    camera_id=props[8],
                    name=name.decode("utf-8"),
                ))
        return records

    def read_points(self, path: str):
        points, colors = [], []
        with open(path, "rb") as fid:
            num_points = read_next_bytes(fid, 8, "Q")[0]
            for _ in range(num_points):
                props = read_next_bytes(fid, 43, "QdddBBBd")
                points.append(props[1:4])
                colors.append(props[4:7])
                track_length = read_next_bytes(fid, 8, "Q")[0]
                read_next_bytes(fid, 8 * track_length, "ii" * track_length)
        return (np.array(points, dtype=np.float64).reshape(-1, 3),
                np.array(colors, dtype=np.float64).reshape(-1, 3) / 255.0)
