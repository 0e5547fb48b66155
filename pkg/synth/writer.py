import json
import logging
import os
from typing import Dict

import numpy as np

from ingest.colmap_writer import write_colmap_text
from ingest.views import write_image
from storage.factory import save_splats
from storage.ply_storage import save_points
from synth.scenes import SynthScene

logger = logging.getLogger(__name__)

SCENE_FILE = "scene.json"
CAMERAS_FILE = "cameras.json"


def write_scene(scene: SynthScene, out_dir: str) -> Dict[str, str]:
    """Dump a synthetic scene as a dataset the CLI can consume

    Layout:
        sparse/           COLMAP text model (cameras, images, sparse points)
        images/, masks/   8-bit PNGs named after the views
        defects/          defect maps, only for scenes that carry them
        cameras.json      camera descriptions accepted by `render --camera`
        splats.ply        planted splats, only for scenes that carry them
        surface_points.ply  ground-truth surface samples
        scene.json        ground-truth indices and scene constants

    Returns:
        Mapping from artifact name to path
    """
    paths = {
        'sparse': os.path.join(out_dir, 'sparse'),
        'images': os.path.join(out_dir, 'images'),
        'masks': os.path.join(out_dir, 'masks'),
        'cameras': os.path.join(out_dir, CAMERAS_FILE),
        'scene': os.path.join(out_dir, SCENE_FILE),
    }
    os.makedirs(paths['images'], exist_ok=True)
    os.makedirs(paths['masks'], exist_ok=True)
    write_colmap_text(scene.sparse_model(), paths['sparse'])

    for view in scene.views:
        write_image(view.image, os.path.join(paths['images'], view.name))
        write_image(view.mask, os.path.join(paths['masks'], view.name))

    if scene.defects is not None:
        paths['defects'] = os.path.join(out_dir, 'defects')
        os.makedirs(paths['defects'], exist_ok=True)
        for view, defect in zip(scene.views, scene.defects):
            write_image(defect.astype(np.float64), os.path.join(paths['defects'], view.name))

    with open(paths['cameras'], 'w') as f:
        json.dump([view.camera.to_dict() for view in scene.views], f, indent=2)

    if scene.splats is not None:
        paths['splats'] = save_splats(scene.splats, os.path.join(out_dir, 'splats.ply'))
    if scene.surface_points is not None:
        paths['surface_points'] = save_points(scene.surface_points, os.path.join(out_dir, 'surface_points.ply'))

    record = {
        'name': scene.name,
        'views': len(scene.views),
        'radius': scene.radius,
        'plane_z': scene.plane_z,
        'hidden_indices': scene.hidden_indices.tolist(),
        'outside_indices': scene.outside_indices.tolist(),
        'background_point_indices': scene.background_point_indices.tolist(),
        'defect_views': [] if scene.defects is None else [i for i, d in enumerate(scene.defects) if d.any()],
    }
    with open(paths['scene'], 'w') as f:
        json.dump(record, f, indent=2)

    logger.info(f"Wrote {scene.name} scene ({len(scene.views)} views) to {out_dir}")
    return paths
