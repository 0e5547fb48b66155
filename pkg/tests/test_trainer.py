"""
Optimizer and training loop tests
"""
import os
import tempfile

import numpy as np
import pytest

from core.config import TrainConfig
from core.exceptions import CheckpointException, ConfigurationException, ContractException
from core.optimizer import AdamOptimizer, OptimizerState, exponential_lr
from core.trainer import SplatTrainer, ViewScheduler, active_sh_degree
from ingest.initialization import init_splats
from metrics.image_metrics import masked_psnr
from models.render_output import SplatGradients
from models.results import TrainStatus
from models.splats import SplatSet
from rasterizer.renderer import render_forward
from storage.metrics_log import MetricsLog, read_records
from synth.scenes import make_erroneous_mask_scene, make_sphere_scene


@pytest.fixture
def init(sphere_scene):
    return init_splats(sphere_scene.sparse_model(), sh_degree=1)


class TestOptimizer:
    """Test Adam updates and learning-rate schedules"""

    def test_exponential_lr_endpoints(self):
        """Test the schedule starts and ends at the given rates"""
        assert exponential_lr(1e-2, 1e-4, 0, 100) == pytest.approx(1e-2)
        assert exponential_lr(1e-2, 1e-4, 100, 100) == pytest.approx(1e-4)
        assert exponential_lr(1e-2, 1e-4, 50, 100) == pytest.approx(1e-3)

    def test_first_step_moves_by_learning_rate(self):
        """Test the first Adam step has magnitude lr in every coordinate"""
        splats = SplatSet.from_decoded(np.zeros((2, 3)), scale=0.1, opacity=0.5, rgb=[0.5, 0.5, 0.5], sh_degree=0)
        config = TrainConfig(opacity_lr=0.05)
        optimizer = AdamOptimizer(config, extent=1.0)
        grads = SplatGradients.zeros_like(splats)
        grads.opacity_logit[:] = [2.0, -3.0]
        before = splats.opacity_logit.copy()
        optimizer.step(splats, grads, 1)
        np.testing.assert_allclose(splats.opacity_logit - before, [-0.05, 0.05], rtol=1e-6)
        assert optimizer.state.step == 1

    def test_rotations_stay_normalized(self):
        """Test quaternions are unit length after an update"""
        splats = SplatSet.from_decoded(np.zeros((3, 3)), scale=0.1, opacity=0.5, rgb=[0.5, 0.5, 0.5], sh_degree=0)
        optimizer = AdamOptimizer(TrainConfig(rotation_lr=0.3), extent=1.0)
        grads = SplatGradients.zeros_like(splats)
        grads.rotation[:] = np.random.default_rng(0).normal(size=(3, 4))
        optimizer.step(splats, grads, 1)
        np.testing.assert_allclose(np.linalg.norm(splats.rotation, axis=1), 1.0, atol=1e-12)

    def test_row_mismatch(self):
        """Test binding a state of the wrong size raises"""
        splats = SplatSet.from_decoded(np.zeros((3, 3)), scale=0.1, opacity=0.5, rgb=[0.5, 0.5, 0.5], sh_degree=0)
        state = OptimizerState.zeros_like(splats.select(np.array([True, False, True])))
        with pytest.raises(ContractException):
            AdamOptimizer(TrainConfig(), 1.0, state=state).bind(splats)


class TestSchedule:
    """Test view scheduling and SH upgrades"""

    def test_every_view_once_per_epoch(self):
        """Test each epoch visits every view exactly once"""
        scheduler = ViewScheduler(5, np.random.default_rng(0))
        first = [scheduler.next() for _ in range(5)]
        second = [scheduler.next() for _ in range(5)]
        assert sorted(first) == list(range(5))
        assert sorted(second) == list(range(5))
        assert scheduler.epoch == 2

    def test_restore(self):
        """Test a restored scheduler continues the same sequence"""
        rng = np.random.default_rng(4)
        scheduler = ViewScheduler(6, rng)
        for _ in range(3):
            scheduler.next()
        state = scheduler.state()
        rng_state = rng.bit_generator.state
        expected = [scheduler.next() for _ in range(8)]

        rng2 = np.random.default_rng(99)
        rng2.bit_generator.state = rng_state
        restored = ViewScheduler(6, rng2)
        restored.restore(state)
        assert [restored.next() for _ in range(8)] == expected

    def test_sh_degree_schedule(self):
        """Test one band is added every upgrade interval up to the maximum"""
        config = TrainConfig(sh_degree_max=2, sh_upgrade_interval=1000)
        assert [active_sh_degree(config, t) for t in (1, 999, 1000, 2500, 9000)] == [0, 0, 1, 2, 2]


class TestTrainer:
    """Test the training loop"""

    def test_zero_iterations_returns_copy(self, sphere_scene, init):
        """Test iterations = 0 returns the initial set bit for bit"""
        config = TrainConfig(iterations=0)
        splats, result = SplatTrainer(config).train(sphere_scene.views, init)
        assert splats.equals(init)
        assert splats is not init
        assert result.status == TrainStatus.COMPLETED
        assert result.iterations == 0

    def test_short_run(self, sphere_scene, init, train_config):
        """Test a short run completes with consistent bookkeeping"""
        splats, result = SplatTrainer(train_config).train(sphere_scene.views, init)
        assert result.status == TrainStatus.COMPLETED
        assert result.iterations == train_config.iterations
        assert result.final_count == splats.count
        assert result.counters.expected_count(init.count) == splats.count
        assert len(result.history) == train_config.iterations
        assert all(record.losses.is_finite() for record in result.history)
        assert np.all(np.isfinite(splats.position))
        np.testing.assert_allclose(np.linalg.norm(splats.rotation, axis=1), 1.0, atol=1e-9)

    def test_seeded_runs_are_identical(self, sphere_scene, init, train_config):
        """Test two runs with the same seed produce bit-identical splats"""
        first, _ = SplatTrainer(train_config).train(sphere_scene.views, init)
        second, _ = SplatTrainer(train_config).train(sphere_scene.views, init)
        assert first.equals(second)

    def test_float32_precision(self, sphere_scene, init, train_config):
        """Test single-precision training stores float32 parameters"""
        config = train_config.with_overrides(precision="float32", iterations=5)
        splats, _ = SplatTrainer(config).train(sphere_scene.views, init)
        assert splats.dtype == np.float32

    def test_resume_is_bit_exact(self, sphere_scene, init, train_config):
        """Test an interrupted and resumed run matches an uninterrupted one"""
        config = train_config.with_overrides(deterministic=True)
        reference, _ = SplatTrainer(config).train(sphere_scene.views, init)
        with tempfile.TemporaryDirectory() as temp_dir:
            trainer = SplatTrainer(config)
            trainer.set_output_dir(temp_dir)
            partial, partial_result = trainer.train(sphere_scene.views, init, stop_after=12)
            assert partial_result.iterations == 12
            checkpoint = trainer.load_checkpoint(os.path.join(temp_dir, "checkpoint_000012.npz"))
            assert checkpoint.splats.equals(partial)

            resumed, result = SplatTrainer(config).train(sphere_scene.views, init, checkpoint=checkpoint)
        assert result.iterations == config.iterations
        assert resumed.equals(reference)

    def test_deterministic_resume_rejects_changed_config(self, sphere_scene, init, train_config):
        """Test resuming with a different coefficient fails in deterministic mode"""
        config = train_config.with_overrides(deterministic=True)
        with tempfile.TemporaryDirectory() as temp_dir:
            trainer = SplatTrainer(config)
            trainer.set_output_dir(temp_dir)
            trainer.train(sphere_scene.views, init, stop_after=3)
            checkpoint = trainer.load_checkpoint(os.path.join(temp_dir, "checkpoint_000003.npz"))
        changed = config.with_overrides(gamma_coeff=0.9)
        with pytest.raises(CheckpointException):
            SplatTrainer(changed).train(sphere_scene.views, init, checkpoint=checkpoint)

    def test_deterministic_resume_rejects_new_length(self, sphere_scene, init, train_config):
        """Test a deterministic resume cannot change the iteration count the schedule derives from"""
        config = train_config.with_overrides(deterministic=True)
        with tempfile.TemporaryDirectory() as temp_dir:
            trainer = SplatTrainer(config)
            trainer.set_output_dir(temp_dir)
            trainer.train(sphere_scene.views, init, stop_after=3)
            checkpoint = trainer.load_checkpoint(os.path.join(temp_dir, "checkpoint_000003.npz"))
        longer = config.with_overrides(iterations=config.iterations * 2)
        with pytest.raises(CheckpointException) as exc:
            SplatTrainer(longer).train(sphere_scene.views, init, checkpoint=checkpoint)
        assert "'iterations'" in str(exc.value)
        _, result = SplatTrainer(config.with_overrides(log_interval=5)).train(sphere_scene.views, init,
                                                                             checkpoint=checkpoint)
        assert result.iterations == config.iterations

    def test_metrics_log(self, sphere_scene, init, train_config):
        """Test one NDJSON record per logged iteration"""
        config = train_config.with_overrides(iterations=6, log_interval=2)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "metrics.ndjson")
            trainer = SplatTrainer(config)
            with MetricsLog(path) as log:
                trainer.set_metrics_log(log)
                trainer.train(sphere_scene.views, init)
            records = read_records(path)
        assert [r['iteration'] for r in records] == [2, 4, 6]
        assert {'total', 'photometric', 'background', 'depth_distortion', 'normal_consistency',
                'splats', 'view'} <= set(records[0])

    def test_occlusion_pruning_disabled(self, sphere_scene, init, train_config):
        """Test no splat is removed for occlusion when the switch is off"""
        config = train_config.with_overrides(occlusion_pruning=False)
        _, result = SplatTrainer(config).train(sphere_scene.views, init)
        assert result.counters.pruned_occluded == 0

    def test_no_views(self, init):
        """Test training without views is a configuration error"""
        with pytest.raises(ConfigurationException):
            SplatTrainer(TrainConfig(iterations=1)).train([], init)

    def test_all_masks_empty(self, sphere_scene, init):
        """Test masked training on empty masks is rejected"""
        views = [view.without_mask() for view in sphere_scene.views]
        for view in views:
            view.mask[:] = 0.0
        with pytest.raises(ConfigurationException):
            SplatTrainer(TrainConfig(iterations=1)).train(views, init)


ACCEPTANCE_ITERATIONS = 2000
# largest masked PSNR drop, in dB, allowed for masking plus pruning against the baseline
MASKED_PSNR_TOLERANCE = 2.0


def train_preset(scene, preset: str, **overrides):
    """Train a scene with one of the ablation presets"""
    config = TrainConfig(iterations=ACCEPTANCE_ITERATIONS, seed=0, sh_degree_max=1, log_interval=100)
    config = config.with_preset(preset).with_overrides(**overrides)
    init = init_splats(scene.sparse_model(), sh_degree=config.sh_degree_max)
    return SplatTrainer(config).train(scene.views, init)


def region_alpha(splats, views, regions) -> float:
    """Mean rendered alpha over the given per-view pixel regions"""
    total, count = 0.0, 0
    for view, region in zip(views, regions):
        region = np.asarray(region, dtype=bool)
        total += float(render_forward(splats, view.camera).alpha[region].sum())
        count += int(region.sum())
    return total / count


def mean_masked_psnr(splats, views) -> float:
    return float(np.mean([masked_psnr(view.image, render_forward(splats, view.camera).color, view.mask)
                          for view in views]))


@pytest.fixture(scope="module")
def floor_scene():
    """Sphere on a checkered floor, 16 views; the floor seeds most of the sparse cloud"""
    return make_sphere_scene(n_views=16, size=64, n_object_points=200, n_background_points=400, seed=0)


@pytest.fixture(scope="module")
def preset_runs(floor_scene):
    """Memoized training runs on the floor scene, keyed by preset and overrides"""
    runs = {}

    def run(preset: str, **overrides):
        key = (preset, tuple(sorted(overrides.items())))
        if key not in runs:
            runs[key] = train_preset(floor_scene, preset, **overrides)
        return runs[key]
    return run


@pytest.mark.slow
class TestTrainingOutcomes:
    """Test what masked training and occlusion pruning do to a full training run"""

    def test_background_removed(self, floor_scene, preset_runs):
        """Test the background loss clears alpha outside the mask and removes the floor splats"""
        splats, _ = preset_runs("masking")
        outside = [view.mask == 0 for view in floor_scene.views]
        assert region_alpha(splats, floor_scene.views, outside) < 0.01
        # floor splats barely move; the sphere's lowest point sits above this band
        on_floor = int((splats.position[:, 2] < floor_scene.plane_z + 0.1).sum())
        assert on_floor <= 0.05 * len(floor_scene.background_point_indices)

    def test_background_kept_without_background_loss(self, floor_scene, preset_runs):
        """Test gamma = 0 leaves the floor visible outside the mask"""
        splats, _ = preset_runs("masking", gamma_coeff=0.0)
        outside = [view.mask == 0 for view in floor_scene.views]
        assert region_alpha(splats, floor_scene.views, outside) > 0.1

    def test_model_size_reduction(self, floor_scene, preset_runs):
        """Test masking and pruning shrink the model without losing object quality"""
        counts = {name: preset_runs(name)[1].final_count for name in ("baseline", "pruning", "masking", "full")}
        assert counts["pruning"] <= counts["baseline"]
        assert counts["masking"] < counts["baseline"]
        assert counts["full"] < counts["pruning"]
        assert counts["full"] < 0.5 * counts["baseline"]
        baseline_psnr = mean_masked_psnr(preset_runs("baseline")[0], floor_scene.views)
        full_psnr = mean_masked_psnr(preset_runs("full")[0], floor_scene.views)
        assert full_psnr >= baseline_psnr - MASKED_PSNR_TOLERANCE


@pytest.mark.slow
class TestMaskRobustness:
    """Test training on defective masks"""

    def test_eroded_regions_recovered(self):
        """Test object pixels cut from a few masks are still rendered opaque"""
        scene = make_erroneous_mask_scene(defect_rate=0.1, mode="erode", n_views=16, size=64,
                                          with_background=False, seed=0)
        defective = [view for view in scene.views if view.defect is not None and view.defect.any()]
        assert defective
        splats, _ = train_preset(scene, "full")
        assert region_alpha(splats, defective, [view.defect for view in defective]) > 0.5

    def test_consistent_hole_stays_transparent(self):
        """Test a cap missing from every mask is learned as empty"""
        scene = make_erroneous_mask_scene(defect_rate=1.0, consistent=True, n_views=16, size=64,
                                          with_background=False, seed=0)
        holes = [view for view in scene.views if view.defect is not None and view.defect.any()]
        assert holes
        splats, _ = train_preset(scene, "full")
        assert region_alpha(splats, holes, [view.defect for view in holes]) < 0.1
