import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from core.exceptions import IngestException
from ingest.factory import parse_colmap
from models.camera import TrainingView
from models.sparse_model import SparseModel

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 0.5
IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.tif', '.tiff', '.bmp')


def read_image(path: str) -> np.ndarray:
    """Read an 8- or 16-bit image as float64 RGB in [0, 1]"""
    if not os.path.exists(path):
        raise IngestException(f"Image not found: {path}")
    with Image.open(path) as img:
        if img.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
            gray = np.asarray(img, dtype=np.float64) / 65535.0
            return np.repeat(np.clip(gray, 0.0, 1.0)[..., None], 3, axis=2)
        return np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0


def read_mask(path: str) -> np.ndarray:
    """Read a grayscale mask and binarize it at 0.5"""
    if not os.path.exists(path):
        raise IngestException(f"Mask not found: {path}")
    with Image.open(path) as img:
        if img.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
            gray = np.asarray(img, dtype=np.float64) / 65535.0
        else:
            gray = np.asarray(img.convert('L'), dtype=np.float64) / 255.0
    return (gray >= MASK_THRESHOLD).astype(np.float64)


def write_image(array: np.ndarray, path: str) -> str:
    """Float image in [0, 1], (h, w) or (h, w, 3), as an 8-bit file (format from the extension)"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    data = np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)
    return path


def index_by_stem(directory: str) -> Dict[str, str]:
    """Map file stems to paths for the image files of a directory"""
    if not os.path.isdir(directory):
        raise IngestException(f"Directory not found: {directory}")
    files = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in IMAGE_EXTENSIONS:
            files.setdefault(stem, os.path.join(directory, name))
    return files


def load_views(model: SparseModel, image_dir: str, mask_dir: Optional[str] = None,
               workers: Optional[int] = None) -> List[TrainingView]:
    """Pair every registered image with its camera and mask

    Masks are matched to images by filename stem. Without a mask directory
    every mask is all ones.
    """
    cameras = model.cameras
    masks = index_by_stem(mask_dir) if mask_dir else None

    def load(index: int) -> TrainingView:
        record = model.image_records[index]
        camera = cameras[index]
        image = read_image(os.path.join(image_dir, record.name))
        if image.shape[:2] != camera.shape:
            raise IngestException(
                f"View {index} ({record.name}): image is {image.shape[1]}x{image.shape[0]}, "
                f"camera expects {camera.width}x{camera.height}")
        if masks is None:
            mask = np.ones(camera.shape)
        else:
            stem = os.path.splitext(os.path.basename(record.name))[0]
            if stem not in masks:
                raise IngestException(f"View {index} ({record.name}): no mask with stem '{stem}' in {mask_dir}")
            mask = read_mask(masks[stem])
            if mask.shape != camera.shape:
                raise IngestException(
                    f"View {index} ({record.name}): mask is {mask.shape[1]}x{mask.shape[0]}, "
                    f"camera expects {camera.width}x{camera.height}")
        return TrainingView(camera=camera, image=image, mask=mask, index=index, name=record.name)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        views = list(pool.map(load, range(model.n_images)))
    logger.info(f"Loaded {len(views)} views from {image_dir}" + (f" with masks from {mask_dir}" if mask_dir else ""))
    return views


def dataset_paths(data_dir: str) -> Tuple[str, str]:
    """Locate the sparse model and image directories of a dataset root

    Accepts `<root>/sparse/0`, `<root>/sparse` or the root itself for the
    model, and `<root>/images` or the root itself for the images.
    """
    if not os.path.isdir(data_dir):
        raise IngestException(f"Dataset directory not found: {data_dir}")
    model_dir = data_dir
    for candidate in (os.path.join(data_dir, 'sparse', '0'), os.path.join(data_dir, 'sparse')):
        if os.path.isdir(candidate):
            model_dir = candidate
            break
    image_dir = os.path.join(data_dir, 'images')
    if not os.path.isdir(image_dir):
        image_dir = data_dir
    return model_dir, image_dir


def load_dataset(data_dir: str, mask_dir: Optional[str] = None,
                 workers: Optional[int] = None) -> Tuple[SparseModel, List[TrainingView]]:
    """Parse the sparse model of a dataset root and load its views"""
    model_dir, image_dir = dataset_paths(data_dir)
    model = parse_colmap(model_dir)
    return model, load_views(model, image_dir, mask_dir, workers)
