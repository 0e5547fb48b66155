import numpy as np
import pytest

from core.config import TrainConfig
from models.camera import CameraView
from models.splats import SplatSet, normalize_quaternions, sh_count
from synth.scenes import make_occluder_scene, make_sphere_scene


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def camera():
    """Small camera at the origin looking along +z"""
    return CameraView(np.eye(4), fx=24.0, fy=24.0, cx=12.0, cy=12.0, width=24, height=24, name="probe.png")


def random_splats(count: int, seed: int = 0, sh_degree: int = 1, depth=(2.5, 4.0),
                  spread: float = 0.8, scale=(0.08, 0.3), opacity=(0.3, 0.9)) -> SplatSet:
    """Randomly oriented discs in front of the probe camera"""
    rng = np.random.default_rng(seed)
    z = rng.uniform(depth[0], depth[1], count)
    xy = rng.uniform(-spread, spread, size=(count, 2)) * z[:, None] / 2.0
    position = np.column_stack([xy, z])
    sh = rng.normal(scale=0.3, size=(count, sh_count(sh_degree), 3))
    sh[:, 0, :] = rng.uniform(-1.0, 1.0, size=(count, 3))
    # keep discs from turning edge-on to the camera
    rotation = normalize_quaternions(np.column_stack([np.ones(count), rng.normal(scale=0.25, size=(count, 3))]))
    return SplatSet(
        position=position,
        rotation=rotation,
        log_scale=np.log(rng.uniform(scale[0], scale[1], size=(count, 2))),
        opacity_logit=np.log(1.0 / (1.0 / rng.uniform(opacity[0], opacity[1], count) - 1.0)),
        sh_coeffs=sh,
    )


@pytest.fixture
def splat_factory():
    """Seeded random splat sets"""
    return random_splats


@pytest.fixture
def splats():
    return random_splats(12, seed=3)


@pytest.fixture(scope="module")
def occluder_scene():
    """Walls with 5 hidden splats behind them and 3 splats beyond every frustum"""
    return make_occluder_scene(n_hidden=5, n_visible=8, n_outside=3, n_views=4, size=32, seed=0)


@pytest.fixture(scope="module")
def sphere_scene():
    """Textured unit sphere seen by 8 cameras, no floor"""
    return make_sphere_scene(n_views=8, size=32, with_background=False, n_object_points=150, seed=0)


@pytest.fixture
def train_config():
    """Short schedule with every control event firing at least once"""
    return TrainConfig(
        iterations=20,
        seed=0,
        precision="float64",
        densify_from_iter=4,
        densify_interval=5,
        densify_until_iter=16,
        opacity_reset_interval=15,
        occlusion_prune_interval=10,
        depth_distortion_from_iter=5,
        normal_consistency_from_iter=10,
        sh_degree_max=1,
        sh_upgrade_interval=10,
        log_interval=1,
    )
