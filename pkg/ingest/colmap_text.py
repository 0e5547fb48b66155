from typing import Dict, Iterator, List, Tuple

import numpy as np

from core.exceptions import IngestException
from ingest.base import BaseModelReader, intrinsics_from_params
from models.sparse_model import CameraIntrinsics, ImageRecord


def _content_lines(path: str) -> Iterator[Tuple[int, str]]:
    """Non-comment lines with their 1-based line numbers (blank lines kept for image records)"""
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if stripped.startswith('#'):
                continue
            yield lineno, stripped


class ColmapTextReader(BaseModelReader):
    """Reader for cameras.txt / images.txt / points3D.txt"""

    extension = ".txt"

    def get_name(self) -> str:
        return "colmap_text"

    def read_cameras(self, path: str) -> Dict[int, CameraIntrinsics]:
        cameras = {}
        for lineno, line in _content_lines(path):
            if not line:
                continue
            elems = line.split()
            try:
                camera_id = int(elems[0])
                model = elems[1]
                width, height = int(elems[2]), int(elems[3])
                params = [float(e) for e in elems[4:]]
            except (IndexError, ValueError):
                raise IngestException(f"{path}:{lineno}: malformed camera line")
            cameras[camera_id] = intrinsics_from_params(camera_id, model, width, height, params)
        return cameras

    def read_images(self, path: str) -> List[ImageRecord]:
        records = []
        lines = list(_content_lines(path))
        i = 0
        while i < len(lines):
            lineno, line = lines[i]
            if not line:
                i += 1
                continue
            elems = line.split()
            try:
                record = ImageRecord(
                    image_id=int(elems[0]),
                    qvec=np.array([float(e) for e in elems[1:5]]),
                    tvec=np.array([float(e) for e in elems[5:8]]),
                    camera_id=int(elems[8]),
                    name=elems[9],
                )
            except (IndexError, ValueError):
                raise IngestException(f"{path}:{lineno}: malformed image line")
            records.append(record)
            # every record is followed by its (possibly empty) 2D observation line
            i += 2
        return records

    def read_points(self, path: str):
        points, colors = [], []
        for lineno, line in _content_lines(path):
            if not line:
                continue
            elems = line.split()
            try:
                points.append([float(e) for e in elems[1:4]])
                colors.append([int(e) for e in elems[4:7]])
            except ValueError:
                raise IngestException(f"{path}:{lineno}: malformed point line")
            if len(points[-1]) != 3 or len(colors[-1]) != 3:
                raise IngestException(f"{path}:{lineno}: malformed point line")
        return (np.array(points, dtype=np.float64).reshape(-1, 3),
                np.array(colors, dtype=np.float64).reshape(-1, 3) / 255.0)
