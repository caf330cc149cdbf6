import numpy as np
import pytest

from bags import autodiff as ad
from bags import linalg
from bags.cameras import Camera
from bags.errors import DataError, NumericsError
from bags.gaussians import GaussianCloud
from conftest import fd_grad


def make_cloud(rng, n=8, extent=4.0):
    return GaussianCloud(
        positions=rng.normal(size=(n, 3)),
        quats=rng.normal(size=(n, 4)),
        log_scales=rng.uniform(-2, 0, size=(n, 3)),
        opacity_logits=rng.normal(size=n),
        colors=rng.uniform(0, 1, size=(n, 3)),
        scene_extent=extent,
    )


class TestCovariance:
    def test_identity(self):
        cloud = GaussianCloud([[0, 0, 0]], [[1, 0, 0, 0]], [[0, 0, 0]], [0.0], [[1, 1, 1]], 1.0)
        np.testing.assert_allclose(cloud.build_covariance()[0], np.eye(3), atol=1e-12)

    def test_axis_aligned(self):
        s = np.log([2.0, 3.0, 0.5])
        cloud = GaussianCloud([[0, 0, 0]], [[1, 0, 0, 0]], [s], [0.0], [[1, 1, 1]], 10.0)
        np.testing.assert_allclose(cloud.build_covariance()[0], np.diag([4.0, 9.0, 0.25]), atol=1e-12)

    def test_rotated_90_about_z(self):
        q = linalg.axis_angle_quat([0, 0, 1], np.pi / 2)
        cloud = GaussianCloud([[0, 0, 0]], [q], [np.log([2.0, 1.0, 1.0])], [0.0], [[1, 1, 1]], 10.0)
        np.testing.assert_allclose(cloud.build_covariance()[0], np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_spectrum_is_rotation_invariant(self, rng):
        cloud = make_cloud(rng, n=30)
        cov = cloud.build_covariance()
        eig = np.sort(np.linalg.eigvalsh(cov), axis=1)
        want = np.sort(np.exp(2.0 * cloud.log_scales.data), axis=1)
        np.testing.assert_allclose(eig, want, rtol=1e-10, atol=1e-12)

    def test_tape_version_matches(self, rng):
        cloud = make_cloud(rng, n=5)
        np.testing.assert_allclose(cloud.covariance_t().data, cloud.build_covariance(), atol=1e-12)

    def test_tape_gradients_match_fd(self, rng):
        cloud = make_cloud(rng, n=3)
        w = rng.normal(size=(3, 3, 3))
        ad.tsum(cloud.covariance_t() * ad.Tensor(w)).backward()

        def loss_logs(v):
            rot = linalg.quat_to_rotmat(cloud.quats.data)
            cov = np.einsum("nij,nj,nkj->nik", rot, np.exp(2.0 * v), rot)
            return float(np.sum(cov * w))

        def loss_quats(v):
            rot = linalg.quat_to_rotmat(v)
            cov = np.einsum("nij,nj,nkj->nik", rot, np.exp(2.0 * cloud.log_scales.data), rot)
            return float(np.sum(cov * w))

        np.testing.assert_allclose(cloud.log_scales.grad, fd_grad(loss_logs, cloud.log_scales.data.copy()), atol=1e-5)
        np.testing.assert_allclose(cloud.quats.grad, fd_grad(loss_quats, cloud.quats.data.copy()), atol=1e-5)


class TestInvariants:
    def test_empty_cloud_rejected(self):
        with pytest.raises(DataError):
            GaussianCloud(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), 1.0)

    def test_renormalize(self, rng):
        cloud = make_cloud(rng, extent=4.0)
        cloud.quats.data = cloud.quats.data * 3.7
        cloud.colors.data = cloud.colors.data + 2.0
        cloud.log_scales.data = cloud.log_scales.data + 10.0
        cloud.renormalize()
        np.testing.assert_allclose(np.linalg.norm(cloud.quats.data, axis=1), 1.0, atol=1e-12)
        assert cloud.colors.data.max() <= 1.0 and cloud.colors.data.min() >= 0.0
        assert np.exp(cloud.log_scales.data).max() <= 4.0 + 1e-12

    def test_opacities_in_unit_interval(self, rng):
        cloud = make_cloud(rng)
        o = cloud.opacities()
        assert np.all(o > 0) and np.all(o < 1)


class TestDensify:
    def test_quiet_cloud_only_prunes(self, rng):
        cloud = make_cloud(rng, n=6)
        cloud.opacity_logits.data = np.full(6, 2.0)  # opacity ~0.88, nothing pruned
        row_map = cloud.densify_and_prune(rng)
        assert cloud.n == 6
        np.testing.assert_array_equal(row_map, np.arange(6))

    def test_clone_small_hot_gaussian(self, rng):
        cloud = make_cloud(rng, n=1, extent=100.0)  # scale far below 1% extent
        cloud.opacity_logits.data = np.array([2.0])
        cloud.grad_accum[:] = 1.0
        cloud.grad_count[:] = 1.0
        cloud.world_grad_accum[:] = np.array([[1.0, 0.0, 0.0]])
        pos_before = cloud.positions.data.copy()
        row_map = cloud.densify_and_prune(rng)
        assert cloud.n == 2
        np.testing.assert_array_equal(row_map, [0, -1])
        np.testing.assert_array_equal(cloud.positions.data[0], pos_before[0])
        # Clone stepped against the accumulated gradient direction.
        assert cloud.positions.data[1, 0] < pos_before[0, 0]

    def test_split_large_hot_gaussian(self, rng):
        cloud = make_cloud(rng, n=1, extent=1.0)
        cloud.log_scales.data = np.log([[0.5, 0.5, 0.5]])  # 50% of extent
        cloud.opacity_logits.data = np.array([2.0])
        cloud.grad_accum[:] = 1.0
        cloud.grad_count[:] = 1.0
        logs_before = cloud.log_scales.data.copy()
        row_map = cloud.densify_and_prune(rng)
        assert cloud.n == 2
        np.testing.assert_array_equal(row_map, [-1, -1])
        np.testing.assert_allclose(cloud.log_scales.data, np.broadcast_to(logs_before - np.log(1.6), (2, 3)), atol=1e-12)

    def test_prune_faint_gaussian(self, rng):
        cloud = make_cloud(rng, n=3)
        cloud.opacity_logits.data = np.array([2.0, np.log(0.001 / 0.999), 2.0])
        row_map = cloud.densify_and_prune(rng)
        assert cloud.n == 2
        np.testing.assert_array_equal(row_map, [0, 2])

    def test_growth_bounded_by_2x(self, rng):
        cloud = make_cloud(rng, n=40)
        cloud.opacity_logits.data = np.full(40, 2.0)
        cloud.grad_accum[:] = rng.uniform(0, 4e-4, size=40)
        cloud.grad_count[:] = 1.0
        cloud.world_grad_accum[:] = rng.normal(size=(40, 3))
        cloud.densify_and_prune(rng)
        assert cloud.n <= 80
        for name in GaussianCloud.PARAM_NAMES:
            assert np.all(np.isfinite(getattr(cloud, name).data))

    def test_accumulators_reset_and_sized(self, rng):
        cloud = make_cloud(rng, n=5)
        cloud.opacity_logits.data = np.full(5, 2.0)
        cloud.grad_accum[:] = 1.0
        cloud.grad_count[:] = 1.0
        cloud.densify_and_prune(rng)
        assert cloud.grad_accum.shape == (cloud.n,)
        assert np.all(cloud.grad_accum == 0)

    def test_prune_everything_raises(self, rng):
        cloud = make_cloud(rng, n=2)
        cloud.opacity_logits.data = np.full(2, -10.0)
        with pytest.raises(NumericsError):
            cloud.densify_and_prune(rng)


class TestInitFromMask:
    def cam(self, w=64, h=64, dist=4.0):
        return Camera.look_at([0, 0, -dist], [0, 0, 0], [0, 1, 0], 60, w, h)

    def test_full_mask_projects_inside_image(self, rng):
        cam = self.cam()
        image = rng.uniform(size=(64, 64, 3))
        cloud = GaussianCloud.init_from_mask(image, np.ones((64, 64)), cam, 100, rng)
        assert cloud.n == 100
        uv, z = cam.project(cloud.positions.data)
        assert np.all(z > 0)
        assert np.all((uv[:, 0] >= 0) & (uv[:, 0] <= 64))
        assert np.all((uv[:, 1] >= 0) & (uv[:, 1] <= 64))

    def test_empty_mask_raises(self, rng):
        with pytest.raises(DataError):
            GaussianCloud.init_from_mask(np.zeros((8, 8, 3)), np.zeros((8, 8)), self.cam(8, 8), 10, rng)

    def test_centers_near_known_object(self, rng):
        # Disk mask subtending a unit-radius object at the origin.
        cam = self.cam(w=128, h=128, dist=4.0)
        yy, xx = np.mgrid[0:128, 0:128]
        r_pix = cam.fx * 1.0 / 4.0
        mask = (xx + 0.5 - cam.cx) ** 2 + (yy + 0.5 - cam.cy) ** 2 <= r_pix**2
        image = np.ones((128, 128, 3)) * 0.5
        cloud = GaussianCloud.init_from_mask(image, mask, cam, 400, rng)
        dist_from_origin = np.linalg.norm(cloud.positions.data, axis=1)
        assert (dist_from_origin <= 2.0).mean() >= 0.95

    def test_colors_sampled_from_image(self, rng):
        image = np.zeros((16, 16, 3))
        image[:, :, 2] = 0.75
        cloud = GaussianCloud.init_from_mask(image, np.ones((16, 16)), self.cam(16, 16), 50, rng)
        np.testing.assert_allclose(cloud.colors.data, np.broadcast_to([0, 0, 0.75], (50, 3)), atol=1e-12)

    def test_initial_opacity(self, rng):
        cloud = GaussianCloud.init_from_mask(np.ones((8, 8, 3)), np.ones((8, 8)), self.cam(8, 8), 20, rng)
        np.testing.assert_allclose(cloud.opacities(), np.full(20, 0.1), atol=1e-12)


class TestStateDict:
    def test_roundtrip(self, rng):
        cloud = make_cloud(rng)
        state = cloud.state_dict()
        clone = GaussianCloud.from_state_dict(state)
        for name in GaussianCloud.PARAM_NAMES:
            np.testing.assert_array_equal(getattr(clone, name).data, getattr(cloud, name).data)
        assert clone.scene_extent == cloud.scene_extent
