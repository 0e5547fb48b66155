"""
Loss tests: values, warmups and adjoints
"""
import numpy as np
import pytest

from core.config import TrainConfig
from core.exceptions import ContractException
from losses.background import background_loss
from losses.photometric import photometric_loss, photometric_masked
from losses.regularizers import depth_distortion, depth_normals, normal_consistency, normal_consistency_map
from losses.ssim import ssim, ssim_backward, ssim_map
from losses.total import effective_coefficients, total_loss
from models.camera import TrainingView
from rasterizer.renderer import render_forward


@pytest.fixture
def images():
    rng = np.random.default_rng(0)
    return rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))


class TestBackgroundLoss:
    """Test the mean outside-mask opacity"""

    def test_all_ones_mask_gives_zero(self):
        """Test a full mask makes the loss and its gradient vanish"""
        alpha = np.random.default_rng(1).uniform(size=(8, 8))
        value, grad = background_loss(alpha, np.ones((8, 8)))
        assert value == 0.0
        assert not grad.any()

    def test_empty_mask_is_mean_alpha(self):
        """Test an empty mask averages alpha over the whole image"""
        alpha = np.random.default_rng(1).uniform(size=(8, 8))
        value, grad = background_loss(alpha, np.zeros((8, 8)))
        assert value == pytest.approx(alpha.mean(), abs=1e-15)
        np.testing.assert_allclose(grad, 1.0 / 64)

    def test_shape_mismatch(self):
        """Test mismatched shapes raise"""
        with pytest.raises(ContractException):
            background_loss(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    """Test the windowed SSIM"""

    def test_identical_images(self, images):
        """Test SSIM of an image with itself is one"""
        x, _ = images
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self, images):
        """Test SSIM(x, y) equals SSIM(y, x)"""
        x, y = images
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)

    def test_backward_matches_finite_differences(self, images):
        """Test the adjoint against central differences"""
        x, y = images
        grad_map = np.random.default_rng(3).normal(size=x.shape)
        grad = ssim_backward(x, y, ssim_map(x, y), grad_map)
        eps = 1e-6
        for index in [(0, 0, 0), (7, 8, 1), (15, 3, 2)]:
            shifted = y.copy()
            shifted[index] += eps
            plus = np.sum(grad_map * ssim_map(x, shifted).ssim_map)
            shifted[index] -= 2 * eps
            minus = np.sum(grad_map * ssim_map(x, shifted).ssim_map)
            assert grad[index] == pytest.approx((plus - minus) / (2 * eps), rel=1e-5, abs=1e-8)


class TestPhotometric:
    """Test the L1 + D-SSIM photometric term"""

    def test_identical_images_give_zero(self, images):
        """Test a perfect render has zero loss"""
        x, _ = images
        value, _ = photometric_loss(x, x)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_pure_l1_weight(self, images):
        """Test lambda = 0 reduces to mean absolute error"""
        x, y = images
        value, grad = photometric_loss(x, y, lambda_dssim=0.0)
        assert value == pytest.approx(np.abs(x - y).mean(), abs=1e-15)
        np.testing.assert_allclose(grad, np.sign(y - x) / x.size)

    def test_masked_ignores_outside_pixels(self, images):
        """Test pixels outside the mask affect neither value nor gradient"""
        x, y = images
        mask = np.zeros((16, 16))
        mask[4:12, 4:12] = 1.0
        value, grad = photometric_masked(x, y, mask)
        changed = y.copy()
        changed[mask == 0] = 0.0
        value2, _ = photometric_masked(x, changed, mask)
        assert value == pytest.approx(value2, abs=1e-15)
        assert not grad[mask == 0].any()

    def test_full_mask_equals_unmasked(self, images):
        """Test an all-ones mask gives the unmasked loss"""
        x, y = images
        assert photometric_masked(x, y, np.ones((16, 16)))[0] == pytest.approx(photometric_loss(x, y)[0], abs=1e-15)

    def test_inconsistent_shapes(self, images):
        """Test a mask of the wrong size raises"""
        x, y = images
        with pytest.raises(ContractException):
            photometric_masked(x, y, np.ones((8, 8)))


class TestRegularizers:
    """Test the per-ray and map-level regularizers"""

    def test_distortion_of_single_surface_is_zero(self):
        """Test weights concentrated at one depth give no distortion"""
        value, _, _ = depth_distortion(np.array([0.3, 0.4, 0.2]), np.array([2.0, 2.0, 2.0]))
        assert value == pytest.approx(0.0, abs=1e-15)

    def test_distortion_two_samples(self):
        """Test the closed form for two samples"""
        value, grad_w, grad_z = depth_distortion(np.array([0.5, 0.25]), np.array([1.0, 3.0]))
        assert value == pytest.approx(0.5 * 0.25 * 2.0)
        np.testing.assert_allclose(grad_w, [0.5, 1.0])
        np.testing.assert_allclose(grad_z, [-0.125, 0.125])

    def test_normal_consistency_aligned_is_zero(self):
        """Test splat normals equal to the surface normal give zero"""
        normals = np.tile([0.0, 0.0, -1.0], (3, 1))
        value, grad_w, _, _ = normal_consistency(np.array([0.2, 0.3, 0.1]), normals, np.array([0.0, 0.0, -1.0]))
        assert value == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(grad_w, 0.0, atol=1e-15)

    def test_normal_consistency_opposed(self):
        """Test opposite normals cost twice the weight"""
        value, _, _, _ = normal_consistency(np.array([0.25]), np.array([[0.0, 0.0, 1.0]]), np.array([0.0, 0.0, -1.0]))
        assert value == pytest.approx(0.5)

    def test_depth_normals_of_a_plane(self, camera):
        """Test a constant-depth map yields normals along the optical axis"""
        rays = camera.ray_directions()
        normals, valid, _ = depth_normals(np.full(camera.shape, 2.0), rays)
        assert valid[1:-1, 1:-1].all()
        assert not valid[0].any() and not valid[:, -1].any()
        np.testing.assert_allclose(np.abs(normals[valid][:, 2]), 1.0, atol=1e-12)

    def test_normal_map_gradients(self, camera):
        """Test all three adjoints of the map-level term against central differences"""
        rng = np.random.default_rng(8)
        h, w = camera.shape
        rays = camera.ray_directions()
        alpha = rng.uniform(0.2, 0.9, size=(h, w))
        normal_map = rng.normal(scale=0.3, size=(h, w, 3))
        depth = 2.0 + 0.1 * rng.normal(size=(h, w))
        _, g_alpha, g_normal, g_depth = normal_consistency_map(alpha, normal_map, depth, rays)
        eps = 1e-6

        def numeric(array, index):
            shifted = array.copy()
            shifted[index] += eps
            args = {'alpha': alpha, 'normal_map': normal_map, 'depth': depth}
            name = next(k for k, v in args.items() if v is array)
            plus = normal_consistency_map(**{**args, name: shifted}, rays=rays)[0]
            shifted[index] -= 2 * eps
            minus = normal_consistency_map(**{**args, name: shifted}, rays=rays)[0]
            return (plus - minus) / (2 * eps)

        assert g_alpha[5, 6] == pytest.approx(numeric(alpha, (5, 6)), abs=1e-8)
        assert g_normal[7, 3, 1] == pytest.approx(numeric(normal_map, (7, 3, 1)), abs=1e-8)
        assert g_depth[10, 12] == pytest.approx(numeric(depth, (10, 12)), rel=1e-4, abs=1e-8)


class TestTotalLoss:
    """Test the combined objective and its warmups"""

    def test_warmups(self):
        """Test distortion and normal terms switch on after their warmup iterations"""
        config = TrainConfig()
        assert effective_coefficients(config, 3000) == (0.0, 0.0, config.gamma_coeff)
        assert effective_coefficients(config, 3001) == (config.alpha_coeff, 0.0, config.gamma_coeff)
        assert effective_coefficients(config, 7001) == (config.alpha_coeff, config.beta_coeff, config.gamma_coeff)

    def test_background_term_requires_masks(self):
        """Test gamma is zero when masks are disabled"""
        config = TrainConfig(use_masks=False)
        assert effective_coefficients(config)[2] == 0.0

    def test_total_is_weighted_sum(self, camera, splats):
        """Test the total matches its components and coefficients"""
        rng = np.random.default_rng(0)
        mask = np.zeros(camera.shape)
        mask[6:18, 6:18] = 1.0
        view = TrainingView(camera, rng.uniform(size=camera.shape + (3,)), mask, index=0)
        output = render_forward(splats, camera)
        config = TrainConfig()
        losses, grads = total_loss(view, output, config, iteration=8000)
        expected = (losses.photometric + config.alpha_coeff * losses.depth_distortion
                    + config.beta_coeff * losses.normal_consistency + config.gamma_coeff * losses.background)
        assert losses.total == pytest.approx(expected, rel=1e-12)
        assert losses.is_finite()
        grads.check_shape(*camera.shape)

    def test_masks_off_ignores_mask(self, camera, splats):
        """Test disabling masks gives the same loss as an all-ones mask"""
        rng = np.random.default_rng(0)
        image = rng.uniform(size=camera.shape + (3,))
        output = render_forward(splats, camera)
        config = TrainConfig(use_masks=False)
        with_mask = TrainingView(camera, image, np.zeros(camera.shape), index=0)
        full = TrainingView(camera, image, np.ones(camera.shape), index=0)
        assert total_loss(with_mask, output, config)[0].total == pytest.approx(
            total_loss(full, output, config)[0].total, abs=1e-15)

    def test_wrong_render_size(self, camera, splats):
        """Test a render for another camera is rejected"""
        view = TrainingView(camera, np.zeros(camera.shape + (3,)), np.ones(camera.shape), index=0)
        output = render_forward(splats, camera)
        output.alpha = np.zeros((5, 5))
        with pytest.raises(ContractException):
            total_loss(view, output, TrainConfig())
