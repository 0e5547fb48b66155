"""
Density control tests: clone, split, prune, opacity reset, row alignment and lossless pruning
"""
import numpy as np
import pytest

from core.config import TrainConfig
from core.optimizer import AdamOptimizer, OptimizerState
from density.control import (
    RESET_OPACITY, DensityController, accumulate_stats, densify, mean_gradients, post_train_occlusion_prune,
    prune_occluded, prune_transparent, reset_opacity,
)
from models.render_output import SplatGradients
from models.splats import SplatSet, decode_params, sigmoid
from rasterizer.renderer import render_forward
from tests.conftest import random_splats


def splats_with_gradients(scales, grads, opacities=None):
    """Splats on the x axis with preset mean screen gradients"""
    m = len(scales)
    splats = SplatSet.from_decoded(
        np.column_stack([np.arange(m, dtype=np.float64), np.zeros(m), np.full(m, 3.0)]),
        scale=np.column_stack([scales, scales]),
        opacity=0.5 if opacities is None else np.asarray(opacities),
        rgb=[0.5, 0.5, 0.5],
        sh_degree=1,
    )
    splats.grad_accum[:] = grads
    splats.grad_count[:] = 1
    splats.seen_since_prune[:] = True
    return splats


class TestDensify:
    """Test clone and split"""

    def test_clone_small_and_split_large(self):
        """Test small high-gradient splats are cloned and large ones split into two"""
        config = TrainConfig()
        splats = splats_with_gradients([0.005, 0.5, 0.005, 0.5], [1.0, 1.0, 0.0, 0.0])
        result, rewrite = densify(splats, config, extent=1.0, rng=np.random.default_rng(0))
        assert rewrite.cloned == 1
        assert rewrite.split == 1
        assert result.count == 4 - 1 + 1 + 2
        np.testing.assert_array_equal(rewrite.keep, [True, False, True, True])
        # survivors first, in order, then clones, then children
        np.testing.assert_array_equal(result.position[:3], splats.position[[0, 2, 3]])
        np.testing.assert_array_equal(result.position[3], splats.position[0])

    def test_split_children_are_smaller(self):
        """Test children shrink by 1.6 and stay on the parent's plane"""
        config = TrainConfig()
        splats = splats_with_gradients([0.5], [1.0])
        result, _ = densify(splats, config, extent=1.0, rng=np.random.default_rng(0))
        assert result.count == 2
        np.testing.assert_allclose(np.exp(result.log_scale), 0.5 / 1.6)
        # identity rotation: the disc plane is z = 3
        np.testing.assert_allclose(result.position[:, 2], 3.0)

    def test_statistics_reset(self):
        """Test gradient statistics are zero after densification"""
        splats = splats_with_gradients([0.005, 0.5], [1.0, 1.0])
        result, _ = densify(splats, TrainConfig(), extent=1.0, rng=np.random.default_rng(0))
        assert not result.grad_accum.any()
        assert not result.grad_count.any()
        assert not result.max_radius.any()
        assert result.seen_since_prune.all()

    def test_nothing_selected(self):
        """Test low gradients leave the set unchanged"""
        splats = splats_with_gradients([0.005, 0.5], [0.0, 0.0])
        result, rewrite = densify(splats, TrainConfig(), extent=1.0, rng=np.random.default_rng(0))
        assert rewrite.added == 0
        assert result.equals(splats, ('position', 'rotation', 'log_scale', 'opacity_logit', 'sh_coeffs'))

    def test_threshold_scale_splits(self):
        """Test a splat whose scale equals percent_dense x extent is split, not cloned"""
        config = TrainConfig(percent_dense=0.5)
        splats = splats_with_gradients([0.2], [1.0])
        largest = float(np.exp(splats.log_scale).max())
        # 0.5 x (2 x largest) reproduces largest exactly
        result, rewrite = densify(splats, config, extent=2.0 * largest, rng=np.random.default_rng(0))
        assert (rewrite.cloned, rewrite.split) == (0, 1)
        assert result.count == 2

    def test_mean_gradients_ignore_unseen(self):
        """Test splats with no samples have zero mean gradient"""
        splats = splats_with_gradients([0.1, 0.1], [2.0, 4.0])
        splats.grad_count[:] = [4, 0]
        np.testing.assert_allclose(mean_gradients(splats), [0.5, 0.0])


class TestPrune:
    """Test transparency and occlusion pruning"""

    def test_transparent_splats_removed(self):
        """Test opacities under the threshold are pruned"""
        splats = splats_with_gradients([0.1, 0.1, 0.1], [0.0] * 3, opacities=[0.001, 0.5, 0.004])
        result, rewrite = prune_transparent(splats, TrainConfig())
        np.testing.assert_array_equal(rewrite.keep, [False, True, False])
        assert result.count == 1
        assert rewrite.removed == 2

    def test_oversized_splats_removed_with_size_bounds(self):
        """Test screen and world size bounds apply only when a screen bound is given"""
        splats = splats_with_gradients([0.05, 0.5], [0.0, 0.0])
        splats.max_radius[:] = [5.0, 5.0]
        config = TrainConfig()
        assert prune_transparent(splats, config, extent=1.0)[0].count == 2
        result, _ = prune_transparent(splats, config, extent=1.0, max_screen_size=20.0)
        assert result.count == 1
        splats.max_radius[0] = 25.0
        assert prune_transparent(splats, config, extent=1.0, max_screen_size=20.0)[0].count == 0

    def test_prune_occluded_clears_flags(self):
        """Test unseen splats go and survivors start a new window"""
        splats = splats_with_gradients([0.1] * 4, [0.0] * 4)
        splats.seen_since_prune[:] = [True, False, True, False]
        result, rewrite = prune_occluded(splats)
        assert result.count == 2
        assert rewrite.removed == 2
        assert not result.seen_since_prune.any()
        np.testing.assert_array_equal(result.position, splats.position[[0, 2]])

    def test_reset_opacity(self):
        """Test opacities are clamped to 0.01 and flags cleared"""
        splats = splats_with_gradients([0.1] * 3, [0.0] * 3, opacities=[0.9, 0.005, 0.5])
        result = reset_opacity(splats)
        opacity = sigmoid(result.opacity_logit)
        assert np.all(opacity <= RESET_OPACITY + 1e-12)
        assert opacity[1] == pytest.approx(0.005)
        assert not result.seen_since_prune.any()


class TestStatistics:
    """Test gradient accumulation"""

    def test_only_contributing_splats_accumulate(self, camera):
        """Test out-of-frustum splats keep zero statistics"""
        splats = random_splats(3, seed=2)
        splats.position[2] = [50.0, 0.0, 3.0]
        output = render_forward(splats, camera)
        grads = SplatGradients.zeros_like(splats)
        grads.screen[:] = 1.5
        accumulate_stats(splats, output, grads)
        assert splats.grad_count[2] == 0
        assert splats.grad_accum[2] == 0.0
        assert not splats.seen_since_prune[2]
        hit = output.contributed
        np.testing.assert_array_equal(splats.grad_count[hit], 1)
        assert splats.seen_since_prune[hit].all()


class TestController:
    """Test that optimizer moments follow every rewrite"""

    def test_optimizer_rows_stay_aligned(self):
        """Test moments of surviving splats move with them and new rows start at zero"""
        splats = splats_with_gradients([0.005, 0.5, 0.005, 0.5], [1.0, 1.0, 0.0, 0.0],
                                       opacities=[0.5, 0.5, 0.001, 0.5])
        state = OptimizerState.zeros_like(splats)
        for name in state.exp_avg:
            state.exp_avg[name] += np.arange(splats.count).reshape((-1,) + (1,) * (state.exp_avg[name].ndim - 1))
        optimizer = AdamOptimizer(TrainConfig(), 1.0, state=state)
        controller = DensityController(TrainConfig(), 1.0, np.random.default_rng(0), optimizer)

        result = controller.densify_and_prune(splats, check_size=False)
        assert optimizer.state.rows == result.count
        # old rows 0 and 3 survive both steps (1 was split, 2 pruned as transparent)
        np.testing.assert_array_equal(optimizer.state.exp_avg['opacity_logit'][:2], [0.0, 3.0])
        assert not optimizer.state.exp_avg['opacity_logit'][2:].any()
        assert controller.counters.cloned == 1
        assert controller.counters.split == 1
        assert controller.counters.pruned_transparent == 1
        assert controller.counters.expected_count(4) == result.count

    def test_occlusion_prune_updates_counters(self):
        """Test occlusion pruning removes optimizer rows and counts the removal"""
        splats = splats_with_gradients([0.1] * 3, [0.0] * 3)
        splats.seen_since_prune[:] = [False, True, True]
        optimizer = AdamOptimizer(TrainConfig(), 1.0, state=OptimizerState.zeros_like(splats))
        controller = DensityController(TrainConfig(), 1.0, np.random.default_rng(0), optimizer)
        result = controller.prune_occluded(splats)
        assert result.count == 2
        assert optimizer.state.rows == 2
        assert controller.counters.pruned_occluded == 1

    def test_occlusion_prune_in_loop_is_lossless(self, occluder_scene):
        """Test a prune after one pass over the views keeps every render bit-identical"""
        scene = occluder_scene
        splats = scene.splats.copy()
        splats.seen_since_prune[:] = False
        for camera in scene.cameras:
            accumulate_stats(splats, render_forward(splats, camera), SplatGradients.zeros_like(splats))
        optimizer = AdamOptimizer(TrainConfig(), 1.0, state=OptimizerState.zeros_like(splats))
        controller = DensityController(TrainConfig(), 1.0, np.random.default_rng(0), optimizer)
        pruned = controller.prune_occluded(splats)
        assert controller.counters.pruned_occluded == len(scene.hidden_indices) + len(scene.outside_indices)
        assert optimizer.state.rows == pruned.count
        for camera in scene.cameras:
            before = render_forward(splats, camera)
            after = render_forward(pruned, camera)
            assert before.color.tobytes() == after.color.tobytes()
            assert before.alpha.tobytes() == after.alpha.tobytes()
            assert before.depth.tobytes() == after.depth.tobytes()

    def test_occlusion_prune_in_loop_random_scene(self, camera):
        """Test the in-loop prune is lossless on a dense random scene"""
        splats = random_splats(40, seed=9, opacity=(0.8, 0.99), scale=(0.2, 0.5))
        accumulate_stats(splats, render_forward(splats, camera), SplatGradients.zeros_like(splats))
        pruned, rewrite = prune_occluded(splats)
        assert pruned.count == splats.count - rewrite.removed
        assert render_forward(splats, camera).color.tobytes() == render_forward(pruned, camera).color.tobytes()

    def test_reset_zeroes_opacity_moments(self):
        """Test an opacity reset clears the opacity moments only"""
        splats = splats_with_gradients([0.1] * 2, [0.0] * 2)
        state = OptimizerState.zeros_like(splats)
        state.exp_avg['opacity_logit'][:] = 1.0
        state.exp_avg['position'][:] = 1.0
        optimizer = AdamOptimizer(TrainConfig(), 1.0, state=state)
        controller = DensityController(TrainConfig(), 1.0, np.random.default_rng(0), optimizer)
        controller.reset_opacity(splats)
        assert not optimizer.state.exp_avg['opacity_logit'].any()
        assert optimizer.state.exp_avg['position'].all()
        assert controller.counters.opacity_resets == 1


class TestPostTrainingPrune:
    """Test the one-shot prune after training"""

    def test_removes_exactly_the_planted_splats(self, occluder_scene):
        """Test hidden and out-of-frustum splats are the ones removed"""
        scene = occluder_scene
        pruned, report = post_train_occlusion_prune(scene.splats, scene.views)
        expected = np.union1d(scene.hidden_indices, scene.outside_indices)
        np.testing.assert_array_equal(report.never_contributed, expected)
        assert report.removed == len(expected)
        assert pruned.count == scene.splats.count - len(expected)

    def test_prune_is_lossless(self, occluder_scene):
        """Test renders before and after the prune are bit-identical"""
        scene = occluder_scene
        pruned, _ = post_train_occlusion_prune(scene.splats, scene.views)
        for camera in scene.cameras:
            before = render_forward(scene.splats, camera)
            after = render_forward(pruned, camera)
            assert before.color.tobytes() == after.color.tobytes()
            assert before.alpha.tobytes() == after.alpha.tobytes()
            assert before.depth.tobytes() == after.depth.tobytes()

    def test_prune_random_scene_is_lossless(self, camera):
        """Test lossless pruning on a dense random scene with occlusion"""
        splats = random_splats(40, seed=9, opacity=(0.8, 0.99), scale=(0.2, 0.5))
        pruned, report = post_train_occlusion_prune(splats, [camera])
        before = render_forward(splats, camera)
        after = render_forward(pruned, camera)
        assert pruned.count == splats.count - report.removed
        assert before.color.tobytes() == after.color.tobytes()

    def test_input_not_modified(self, occluder_scene):
        """Test the census leaves the input set untouched"""
        before = occluder_scene.splats.copy()
        post_train_occlusion_prune(occluder_scene.splats, occluder_scene.views)
        assert occluder_scene.splats.equals(before)

    def test_positions_survive_exactly(self, occluder_scene):
        """Test survivors keep their decoded geometry bit for bit"""
        scene = occluder_scene
        pruned, report = post_train_occlusion_prune(scene.splats, scene.views)
        keep = np.setdiff1d(np.arange(scene.splats.count), report.never_contributed)
        assert decode_params(pruned).position.tobytes() == decode_params(scene.splats).position[keep].tobytes()
