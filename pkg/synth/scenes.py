"""
Deterministic synthetic scenes: an analytic textured sphere, a planted
occluder arrangement and a sphere with defective masks
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion
from scipy.spatial.transform import Rotation
from skimage.morphology import disk

from core.exceptions import ConfigurationException
from ingest.colmap_writer import model_from_cameras
from models.camera import CameraView, TrainingView
from models.sparse_model import SparseModel
from models.splats import SplatSet
from rasterizer.binning import RasterSettings
from rasterizer.renderer import render_forward

logger = logging.getLogger(__name__)

RING_DISTANCE = 4.0
RING_ELEVATION = np.radians(30.0)
PLANE_OFFSET = 1.2
PLANE_HALF_SIZE = 4.0
SURFACE_SAMPLES = 4096

DEFECT_MODES = ("erode", "dilate")


@dataclass(frozen=True)
class CheckerTexture:
    """Checkerboard: `squares` cells per half turn on a sphere, cell size in world units on a plane"""
    squares: int = 8
    cell: float = 0.5
    color_a: Tuple[float, float, float] = (0.9, 0.45, 0.1)
    color_b: Tuple[float, float, float] = (0.15, 0.35, 0.8)

    def on_sphere(self, points: np.ndarray) -> np.ndarray:
        radius = np.linalg.norm(points, axis=-1)
        lon = np.arctan2(points[..., 1], points[..., 0]) + np.pi
        lat = np.arccos(np.clip(points[..., 2] / np.maximum(radius, 1e-12), -1.0, 1.0))
        i = np.floor(lon / (2.0 * np.pi) * 2 * self.squares).astype(np.int64)
        j = np.floor(lat / np.pi * self.squares).astype(np.int64)
        return self._pick((i + j) % 2 == 0)

    def on_plane(self, points: np.ndarray) -> np.ndarray:
        i = np.floor(points[..., 0] / self.cell).astype(np.int64)
        j = np.floor(points[..., 1] / self.cell).astype(np.int64)
        return self._pick((i + j) % 2 == 0)

    def _pick(self, first: np.ndarray) -> np.ndarray:
        return np.where(first[..., None], np.asarray(self.color_a), np.asarray(self.color_b))


BACKGROUND_TEXTURE = CheckerTexture(cell=0.5, color_a=(0.85, 0.85, 0.8), color_b=(0.3, 0.3, 0.3))


@dataclass
class SynthScene:
    """Generated views plus the ground truth each generator plants"""
    name: str
    views: List[TrainingView]
    points: np.ndarray
    colors: np.ndarray
    surface_points: Optional[np.ndarray] = None
    splats: Optional[SplatSet] = None
    hidden_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    outside_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    background_point_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    defects: Optional[List[np.ndarray]] = None
    radius: float = 0.0
    plane_z: Optional[float] = None

    @property
    def cameras(self) -> List[CameraView]:
        return [view.camera for view in self.views]

    @property
    def masks(self) -> List[np.ndarray]:
        return [view.mask for view in self.views]

    def sparse_model(self) -> SparseModel:
        return model_from_cameras(self.cameras, self.points, self.colors, names=[view.name for view in self.views])


def view_name(index: int) -> str:
    return f"view_{index:03d}.png"


def fibonacci_sphere(count: int, radius: float = 1.0) -> np.ndarray:
    """Near-uniform deterministic points on a sphere"""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return radius * np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def ring_cameras(n_views: int, distance: float, elevation: float = RING_ELEVATION,
                 size: int = 64, focal: Optional[float] = None) -> List[CameraView]:
    """Cameras evenly spaced on a horizontal ring, all looking at the origin"""
    focal = float(size) if focal is None else focal
    cameras = []
    for i in range(n_views):
        azimuth = 2.0 * np.pi * i / n_views
        eye = distance * np.array([np.cos(elevation) * np.cos(azimuth),
                                   np.cos(elevation) * np.sin(azimuth),
                                   np.sin(elevation)])
        cameras.append(CameraView.look_at(eye, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                                          focal, focal, size, size, name=view_name(i)))
    return cameras


def world_rays(camera: CameraView) -> Tuple[np.ndarray, np.ndarray]:
    """Camera centre and unit world-space ray directions through every pixel centre"""
    dirs = camera.ray_directions() @ camera.rotation
    return camera.center, dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def trace_sphere(origin: np.ndarray, dirs: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest positive ray parameter hitting a sphere centred at the origin; returns (hit, t)"""
    b = dirs @ origin
    c = origin @ origin - radius * radius
    disc = b * b - c
    with np.errstate(invalid='ignore'):
        t = -b - np.sqrt(np.where(disc >= 0.0, disc, 0.0))
    hit = (disc >= 0.0) & (t > 0.0)
    return hit, np.where(hit, t, np.inf)


def trace_plane(origin: np.ndarray, dirs: np.ndarray, plane_z: float,
                half_size: float) -> Tuple[np.ndarray, np.ndarray]:
    """Ray hits on the square z = plane_z, |x|, |y| <= half_size"""
    dz = dirs[..., 2]
    safe = np.where(np.abs(dz) < 1e-12, 1e-12, dz)
    t = (plane_z - origin[2]) / safe
    points = origin + t[..., None] * dirs
    hit = (t > 0.0) & (np.abs(points[..., 0]) <= half_size) & (np.abs(points[..., 1]) <= half_size)
    return hit, np.where(hit, t, np.inf)


def silhouette(camera: CameraView, radius: float) -> np.ndarray:
    origin, dirs = world_rays(camera)
    hit, _ = trace_sphere(origin, dirs, radius)
    return hit


def trace_sphere_view(camera: CameraView, radius: float, texture: CheckerTexture,
                      plane_z: Optional[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Ray-traced colour image and object mask of the sphere (and optional floor plane)"""
    origin, dirs = world_rays(camera)
    hit, t = trace_sphere(origin, dirs, radius)
    image = np.zeros(camera.shape + (3,))
    image[hit] = texture.on_sphere(origin + t[hit][:, None] * dirs[hit])
    if plane_z is not None:
        plane_hit, t_plane = trace_plane(origin, dirs, plane_z, PLANE_HALF_SIZE)
        floor = plane_hit & (t_plane < t)
        image[floor] = BACKGROUND_TEXTURE.on_plane(origin + t_plane[floor][:, None] * dirs[floor])
    return image, hit.astype(np.float64)


def make_sphere_scene(radius: float = 1.0, n_views: int = 16, texture: Optional[CheckerTexture] = None,
                      with_background: bool = True, size: int = 64, n_object_points: int = 300,
                      n_background_points: int = 300, seed: int = 0) -> SynthScene:
    """Textured sphere seen from a camera ring, optionally standing above a checkered floor

    Args:
        radius: sphere radius (centred at the origin)
        n_views: number of ring cameras, at least 2
        texture: sphere checkerboard, CheckerTexture() by default
        with_background: add the floor plane below the sphere and seed sparse points on it
        size: square image side in pixels
        n_object_points: sparse points sampled on the sphere
        n_background_points: sparse points sampled on the floor
        seed: generator seed for the sparse cloud

    Returns:
        SynthScene with analytic masks, sparse cloud and surface samples
    """
    if n_views < 2:
        raise ConfigurationException(f"sphere scene needs at least 2 views, got {n_views}")
    texture = texture or CheckerTexture()
    rng = np.random.default_rng(seed)
    plane_z = -PLANE_OFFSET * radius if with_background else None

    cameras = ring_cameras(n_views, RING_DISTANCE * radius, size=size)
    views = []
    for i, camera in enumerate(cameras):
        image, mask = trace_sphere_view(camera, radius, texture, plane_z)
        views.append(TrainingView(camera=camera, image=image, mask=mask, index=i, name=camera.name))

    directions = rng.normal(size=(n_object_points, 3))
    object_points = radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    points = [object_points]
    colors = [texture.on_sphere(object_points)]
    background_indices = np.zeros(0, dtype=np.int64)
    if with_background:
        xy = rng.uniform(-PLANE_HALF_SIZE * radius, PLANE_HALF_SIZE * radius, size=(n_background_points, 2))
        floor_points = np.column_stack([xy, np.full(n_background_points, plane_z)])
        points.append(floor_points)
        colors.append(BACKGROUND_TEXTURE.on_plane(floor_points))
        background_indices = np.arange(n_object_points, n_object_points + n_background_points)

    logger.debug(f"sphere scene: {n_views} views, {n_object_points} object / {len(background_indices)} floor points")
    return SynthScene(
        name="sphere",
        views=views,
        points=np.concatenate(points),
        colors=np.concatenate(colors),
        surface_points=fibonacci_sphere(SURFACE_SAMPLES, radius),
        background_point_indices=background_indices,
        radius=radius,
        plane_z=plane_z,
    )


def tangent_frames(normals: np.ndarray) -> np.ndarray:
    """Rotation matrices with columns (t_u, t_v, n) for the given unit normals"""
    helper = np.where(np.abs(normals[:, 2:3]) > 0.9, [[1.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]])
    t_u = np.cross(normals, helper)
    t_u /= np.linalg.norm(t_u, axis=1, keepdims=True)
    t_v = np.cross(normals, t_u)
    return np.stack([t_u, t_v, normals], axis=2)


def frames_to_quaternions(frames: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(frames).as_quat().T
    return np.stack([w, x, y, z], axis=1)


def make_sphere_splats(radius: float = 1.0, count: int = 2000, opacity: float = 0.95,
                       texture: Optional[CheckerTexture] = None, sh_degree: int = 3) -> SplatSet:
    """Opaque tangent discs tiling a sphere"""
    texture = texture or CheckerTexture()
    points = fibonacci_sphere(count, radius)
    normals = points / radius
    spacing = np.sqrt(4.0 * np.pi * radius * radius / count)
    return SplatSet.from_decoded(points, scale=0.7 * spacing, opacity=opacity, rgb=texture.on_sphere(points),
                                 rotation=frames_to_quaternions(tangent_frames(normals)), sh_degree=sh_degree)


def translated_cameras(offsets: np.ndarray, distance: float, size: int, focal: float) -> List[CameraView]:
    """Cameras sharing one orientation (looking along +z), shifted in the image plane"""
    cameras = []
    for i, (dx, dy) in enumerate(offsets):
        pose = np.eye(4)
        pose[:3, 3] = -np.array([dx, dy, -distance])
        cameras.append(CameraView(pose, focal, focal, size / 2.0, size / 2.0, size, size, name=view_name(i)))
    return cameras


def make_occluder_scene(n_hidden: int = 5, n_visible: int = 8, n_outside: int = 0, n_views: int = 4,
                        size: int = 32, seed: int = 0) -> SynthScene:
    """Two near-opaque wall layers with splats planted behind them

    Every camera faces the wall head-on, so the wall covers each image
    completely and the two layers drive transmittance below the
    termination floor. Hidden splats sit behind the wall inside every view
    frustum; outside splats sit beyond every frustum.
    """
    if n_hidden < 0 or n_visible < 0 or n_outside < 0:
        raise ConfigurationException("occluder scene counts must be non-negative")
    rng = np.random.default_rng(seed)
    distance = 3.0
    focal = float(size)
    grid = np.array([(x, y) for x in (-0.3, 0.3) for y in (-0.3, 0.3)])
    offsets = np.concatenate([grid, rng.uniform(-0.3, 0.3, size=(max(n_views - len(grid), 0), 2))])[:n_views]
    cameras = translated_cameras(offsets, distance, size, focal)

    wall = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.05]])
    visible = np.column_stack([rng.uniform(-0.5, 0.5, size=(n_visible, 2)), np.full(n_visible, -1.0)])
    hidden = np.column_stack([rng.uniform(-0.8, 0.8, size=(n_hidden, 2)), rng.uniform(0.5, 1.0, size=n_hidden)])
    outside = np.column_stack([rng.uniform(20.0, 30.0, size=(n_outside, 2)), np.zeros(n_outside)])

    positions = np.concatenate([wall, visible, hidden, outside])
    scales = np.concatenate([np.full((2, 2), 50.0),
                             np.full((n_visible, 2), 0.04),
                             np.full((n_hidden, 2), 0.05),
                             np.full((n_outside, 2), 0.05)])
    opacities = np.concatenate([np.full(2, 0.99999), np.full(n_visible, 0.6),
                                np.full(n_hidden + n_outside, 0.9)])
    colors = np.concatenate([np.full((2, 3), 0.5), rng.uniform(0.1, 0.9, size=(n_visible + n_hidden + n_outside, 3))])

    order = rng.permutation(len(positions))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    splats = SplatSet.from_decoded(positions[order], scales[order], opacities[order], colors[order], sh_degree=0)
    first_hidden = 2 + n_visible
    hidden_indices = np.sort(rank[first_hidden:first_hidden + n_hidden])
    outside_indices = np.sort(rank[first_hidden + n_hidden:])

    settings = RasterSettings()
    views = []
    for i, camera in enumerate(cameras):
        output = render_forward(splats, camera, settings=settings)
        views.append(TrainingView(camera=camera, image=output.color, mask=np.ones(camera.shape),
                                  index=i, name=camera.name))

    logger.debug(f"occluder scene: {splats.count} splats, {n_hidden} hidden, {n_outside} outside")
    return SynthScene(
        name="occluder",
        views=views,
        points=splats.position.copy(),
        colors=colors[order],
        splats=splats,
        hidden_indices=hidden_indices,
        outside_indices=outside_indices,
    )


def boundary_patch(mask: np.ndarray, patch_radius: float, rng: np.random.Generator) -> np.ndarray:
    """Disc of pixels around a random silhouette boundary pixel"""
    inside = mask > 0.5
    boundary = np.argwhere(inside & ~binary_erosion(inside))
    if len(boundary) == 0:
        return np.zeros_like(inside)
    row, col = boundary[rng.integers(len(boundary))]
    rr, cc = np.mgrid[:mask.shape[0], :mask.shape[1]]
    return (rr - row) ** 2 + (cc - col) ** 2 <= patch_radius ** 2


def morph_patch(mask: np.ndarray, patch: np.ndarray, mode: str, structure_radius: int) -> np.ndarray:
    inside = mask > 0.5
    if mode == "erode":
        morphed = binary_erosion(inside, structure=disk(structure_radius))
    else:
        morphed = binary_dilation(inside, structure=disk(structure_radius))
    return np.where(patch, morphed, inside).astype(np.float64)


def cap_hole(camera: CameraView, radius: float, direction: np.ndarray, angle: float) -> np.ndarray:
    """Pixels whose sphere hit point lies within `angle` of a fixed direction"""
    origin, dirs = world_rays(camera)
    hit, t = trace_sphere(origin, dirs, radius)
    hole = np.zeros(camera.shape, dtype=bool)
    points = origin + t[hit][:, None] * dirs[hit]
    hole[hit] = (points / radius) @ direction > np.cos(angle)
    return hole


def make_erroneous_mask_scene(defect_rate: float = 0.1, mode: str = "erode", consistent: bool = False,
                              structure_radius: int = 3, patch_radius: float = 6.0,
                              hole_direction: Tuple[float, float, float] = (1.0, 0.0, 0.5),
                              hole_angle: float = 0.35, seed: int = 0, **sphere_kwargs) -> SynthScene:
    """Sphere scene where a fraction of the views carry mask defects

    Args:
        defect_rate: fraction of views that get a defect, rounded to whole views
        mode: 'erode' drops object pixels from the mask, 'dilate' adds non-object pixels
        consistent: cut the same spherical cap out of the mask in every selected view
        structure_radius: radius of the morphological structuring disc
        patch_radius: pixel radius of the rim patch a defect is confined to
        hole_direction: centre direction of the consistent hole
        hole_angle: angular radius of the consistent hole
        seed: seed of the underlying sphere scene; defects use a derived stream
        **sphere_kwargs: forwarded to make_sphere_scene

    Returns:
        SynthScene with per-view boolean defect maps
    """
    if mode not in DEFECT_MODES:
        raise ConfigurationException(f"Unknown defect mode: {mode}. Available: {', '.join(DEFECT_MODES)}")
    if not 0.0 <= defect_rate <= 1.0:
        raise ConfigurationException(f"defect rate must lie in [0, 1], got {defect_rate}")
    scene = make_sphere_scene(seed=seed, **sphere_kwargs)
    rng = np.random.default_rng([seed, 1])
    n_views = len(scene.views)
    selected = np.sort(rng.choice(n_views, size=int(round(defect_rate * n_views)), replace=False))
    direction = np.asarray(hole_direction, dtype=np.float64)
    direction /= np.linalg.norm(direction)

    defects = [np.zeros(view.camera.shape, dtype=bool) for view in scene.views]
    for i in selected:
        view = scene.views[i]
        if consistent:
            hole = cap_hole(view.camera, scene.radius, direction, hole_angle)
            mask = np.where(hole, 0.0, view.mask)
        else:
            patch = boundary_patch(view.mask, patch_radius, rng)
            mask = morph_patch(view.mask, patch, mode, structure_radius)
        defects[i] = mask != view.mask
        scene.views[i] = TrainingView(camera=view.camera, image=view.image, mask=mask, index=view.index,
                                      name=view.name, defect=defects[i])

    logger.debug(f"mask defects ({'consistent hole' if consistent else mode}) in views {selected.tolist()}")
    scene.name = "badmask"
    scene.defects = defects
    return scene
