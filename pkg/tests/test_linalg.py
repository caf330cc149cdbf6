import numpy as np
import pytest

from bags import autodiff as ad
from bags import linalg
from bags.errors import NumericsError
from conftest import fd_grad


def assert_valid_svd(m, u, s, v, atol=1e-9):
    eye = np.broadcast_to(np.eye(3), u.shape)
    np.testing.assert_allclose(np.einsum("...ji,...jk->...ik", u, u), eye, atol=atol)
    np.testing.assert_allclose(np.einsum("...ji,...jk->...ik", v, v), eye, atol=atol)
    assert np.all(s >= 0)
    assert np.all(s[..., :-1] >= s[..., 1:] - 1e-12)
    recon = np.einsum("...ij,...j,...kj->...ik", u, s, v)
    scale = np.maximum(np.abs(m).max(), 1.0)
    np.testing.assert_allclose(recon, m, atol=atol * scale)


class TestSvd3:
    def test_identity(self):
        u, s, v = linalg.svd3(np.eye(3))
        np.testing.assert_allclose(s, np.ones(3), atol=1e-12)
        assert_valid_svd(np.eye(3), u, s, v)

    def test_random_batch_against_numpy(self, rng):
        m = rng.normal(size=(500, 3, 3))
        u, s, v = linalg.svd3(m)
        assert_valid_svd(m, u, s, v)
        s_ref = np.linalg.svd(m, compute_uv=False)
        np.testing.assert_allclose(s, s_ref, atol=1e-9, rtol=1e-9)

    def test_wide_dynamic_range(self, rng):
        scales = 10.0 ** rng.uniform(-6, 6, size=(200, 1, 1))
        m = rng.normal(size=(200, 3, 3)) * scales
        u, s, v = linalg.svd3(m)
        assert_valid_svd(m, u, s, v, atol=1e-8)
        s_ref = np.linalg.svd(m, compute_uv=False)
        np.testing.assert_allclose(s, s_ref, rtol=1e-8)

    def test_rank_deficient(self, rng):
        a = rng.normal(size=3)
        b = rng.normal(size=3)
        cases = np.stack(
            [
                np.zeros((3, 3)),
                np.outer(a, a),
                np.outer(a, b),
                np.outer(a, a) + np.outer(b, b),
                np.diag([1.0, 0.0, 0.0]),
                np.diag([3.0, 2.0, 0.0]),
            ]
        )
        u, s, v = linalg.svd3(cases)
        assert_valid_svd(cases, u, s, v, atol=1e-8)
        s_ref = np.linalg.svd(cases, compute_uv=False)
        np.testing.assert_allclose(s, s_ref, atol=1e-9)

    def test_near_degenerate_singular_values(self, rng):
        # Clustered spectra stress the Jacobi sweep convergence test.
        q1 = linalg.quat_to_rotmat(linalg.quat_normalize(rng.normal(size=(50, 4))))
        q2 = linalg.quat_to_rotmat(linalg.quat_normalize(rng.normal(size=(50, 4))))
        d = 1.0 + 1e-9 * rng.normal(size=(50, 3))
        m = np.einsum("nij,nj,nkj->nik", q1, d, q2)
        u, s, v = linalg.svd3(m)
        assert_valid_svd(m, u, s, v, atol=1e-8)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            linalg.svd3(np.ones((3, 4)))

    def test_rejects_nonfinite(self):
        m = np.eye(3)
        m = m.copy()
        m[0, 0] = np.nan
        with pytest.raises(NumericsError):
            linalg.svd3(m)


class TestNearestRotation:
    def test_recovers_rotation_from_stretch(self, rng):
        q = linalg.quat_normalize(rng.normal(size=(100, 4)))
        r0 = linalg.quat_to_rotmat(q)
        stretch = rng.uniform(0.3, 3.0, size=(100, 3))
        m = np.einsum("nij,nj->nij", r0, stretch)  # R @ diag(stretch)
        r = linalg.nearest_rotation(m)
        np.testing.assert_allclose(r, r0, atol=1e-8)

    def test_always_proper_rotation(self, rng):
        m = rng.normal(size=(300, 3, 3))
        r = linalg.nearest_rotation(m)
        eye = np.broadcast_to(np.eye(3), r.shape)
        np.testing.assert_allclose(np.einsum("nji,njk->nik", r, r), eye, atol=1e-9)
        np.testing.assert_allclose(np.linalg.det(r), np.ones(300), atol=1e-9)

    def test_matches_polar_factor_when_det_positive(self, rng):
        import scipy.linalg

        for _ in range(20):
            m = rng.normal(size=(3, 3))
            if np.linalg.det(m) <= 0.1:
                continue
            r_ref, _ = scipy.linalg.polar(m)
            r = linalg.nearest_rotation(m[None])[0]
            np.testing.assert_allclose(r, r_ref, atol=1e-8)

    def test_reflection_input(self):
        r = linalg.nearest_rotation(np.diag([1.0, 1.0, -1.0])[None])[0]
        np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-9)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)

    def test_minimizes_frobenius_over_samples(self, rng):
        # The returned rotation must beat random rotations at approximating m.
        m = rng.normal(size=(3, 3))
        r = linalg.nearest_rotation(m[None])[0]
        best = np.linalg.norm(m - r)
        for _ in range(200):
            rr = linalg.quat_to_rotmat(linalg.quat_normalize(rng.normal(size=4)))
            assert np.linalg.norm(m - rr) >= best - 1e-9


class TestQuaternions:
    def test_identity_quat(self):
        np.testing.assert_allclose(linalg.quat_to_rotmat(np.array([1.0, 0, 0, 0])), np.eye(3), atol=1e-15)

    def test_axis_angle_90deg_z(self):
        q = linalg.axis_angle_quat([0, 0, 1], np.pi / 2)
        r = linalg.quat_to_rotmat(q)
        np.testing.assert_allclose(r @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_rotmat_roundtrip(self, rng):
        q = linalg.quat_normalize(rng.normal(size=(50, 4)))
        q[q[:, 0] < 0] *= -1
        r = linalg.quat_to_rotmat(q)
        q2 = linalg.rotmat_to_quat(r)
        np.testing.assert_allclose(q2, q, atol=1e-9)

    def test_multiply_matches_matrix_product(self, rng):
        qa = linalg.quat_normalize(rng.normal(size=(20, 4)))
        qb = linalg.quat_normalize(rng.normal(size=(20, 4)))
        lhs = linalg.quat_to_rotmat(linalg.quat_multiply(qa, qb))
        rhs = np.einsum("nij,njk->nik", linalg.quat_to_rotmat(qa), linalg.quat_to_rotmat(qb))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_slerp_endpoints_and_midpoint(self):
        q0 = np.array([1.0, 0, 0, 0])
        q1 = linalg.axis_angle_quat([0, 0, 1], np.pi / 2)
        np.testing.assert_allclose(linalg.quat_slerp(q0, q1, 0.0), q0, atol=1e-12)
        np.testing.assert_allclose(linalg.quat_slerp(q0, q1, 1.0), q1, atol=1e-12)
        mid = linalg.quat_slerp(q0, q1, 0.5)
        np.testing.assert_allclose(mid, linalg.axis_angle_quat([0, 0, 1], np.pi / 4), atol=1e-12)

    def test_slerp_takes_short_arc(self):
        q0 = np.array([1.0, 0, 0, 0])
        q1 = -linalg.axis_angle_quat([0, 0, 1], np.pi / 4)
        mid = linalg.quat_slerp(q0, q1, 0.5)
        r = linalg.quat_to_rotmat(mid)
        np.testing.assert_allclose(r, linalg.quat_to_rotmat(linalg.axis_angle_quat([0, 0, 1], np.pi / 8)), atol=1e-12)


class TestQuatToRotmatTape:
    def test_matches_numpy_version(self, rng):
        q0 = rng.normal(size=(7, 4))
        out = linalg.quat_to_rotmat_t(ad.Tensor(q0))
        np.testing.assert_allclose(out.data, linalg.quat_to_rotmat(q0), atol=1e-12)

    def test_gradient_fd(self, rng):
        q0 = rng.normal(size=(2, 4))
        w = rng.normal(size=(2, 3, 3))

        def loss_np(v):
            return float(np.sum(linalg.quat_to_rotmat(v) * w))

        q = ad.Tensor(q0, requires_grad=True)
        ad.tsum(linalg.quat_to_rotmat_t(q) * ad.Tensor(w)).backward()
        np.testing.assert_allclose(q.grad, fd_grad(loss_np, q0), atol=1e-6)
