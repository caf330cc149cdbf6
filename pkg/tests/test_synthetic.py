"""Tests for the procedural two-segment arm scene."""

import numpy as np
import pytest

from bags.cameras import Camera
from bags.errors import ConfigError, DataError
from bags.synthetic import (
    ArmOracleProvider,
    _rot_z,
    make_arm_scene,
    scene_from_params,
    write_manifest,
)


@pytest.fixture(scope="module")
def scene():
    return make_arm_scene(splats=600, frames=8, size=64, seed=2)


def test_scene_counts(scene):
    assert scene.cloud.n == 600
    assert scene.n_frames == 8
    assert scene.images.shape == (8, 64, 64, 3)
    assert scene.masks.shape == (8, 64, 64)
    assert scene.labels.shape == (600,)
    assert set(np.unique(scene.labels)) == {0, 1}


def test_scene_deterministic():
    a = make_arm_scene(splats=200, frames=3, size=32, seed=9)
    b = make_arm_scene(splats=200, frames=3, size=32, seed=9)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.cloud.positions.data, b.cloud.positions.data)


def test_segments_split_at_hinge(scene):
    pos = scene.cloud.positions.data
    assert (pos[scene.labels == 0, 0] <= 0.0).all()
    assert (pos[scene.labels == 1, 0] >= 0.0).all()


def test_hinge_rotation_closed_form(scene):
    # segment 1 rotates about z by max_angle * t; segment 0 never moves
    t = 0.7
    means, _ = scene.warped_arrays(t)
    pos = scene.cloud.positions.data
    rot = _rot_z(np.radians(scene.max_angle_deg) * t)
    seg0 = scene.labels == 0
    seg1 = scene.labels == 1
    assert np.array_equal(means[seg0], pos[seg0])
    expected = np.einsum("ij,nj->ni", rot, pos[seg1])
    np.testing.assert_allclose(means[seg1], expected, atol=1e-15)


def test_warp_is_rigid_within_segments(scene):
    # pairwise distances inside a segment are preserved at every time
    pts = scene.cloud.positions.data[scene.labels == 1][:40]
    base = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    for t in (0.3, 1.0):
        moved, _ = scene.warped_arrays(t)
        sub = moved[scene.labels == 1][:40]
        dist = np.linalg.norm(sub[:, None] - sub[None, :], axis=-1)
        np.testing.assert_allclose(dist, base, atol=1e-12)


def test_covariances_rotate_with_segment(scene):
    t = 1.0
    _, covs = scene.warped_arrays(t)
    base = scene.cloud.build_covariance()
    rot = _rot_z(np.radians(scene.max_angle_deg))
    seg1 = np.nonzero(scene.labels == 1)[0][:10]
    for i in seg1:
        np.testing.assert_allclose(covs[i], rot @ base[i] @ rot.T, atol=1e-15)


def test_masks_match_alpha_threshold(scene):
    out = scene.gt_render(scene.cameras[3], float(scene.times[3]))
    assert np.array_equal(scene.masks[3], out.alpha > 0.5)
    assert np.array_equal(scene.images[3], out.image)


def test_object_fully_in_frame(scene):
    for mask in scene.masks:
        assert mask.sum() > 100
        assert not mask[0].any() and not mask[-1].any()
        assert not mask[:, 0].any() and not mask[:, -1].any()


def test_images_are_unit_range(scene):
    assert scene.images.min() >= 0.0
    assert scene.images.max() <= 1.0


def test_frames_actually_move(scene):
    diff = np.abs(scene.images[0] - scene.images[-1]).mean()
    assert diff > 1e-3


def test_novel_camera_renders(scene):
    cam = Camera.orbit((0, 0, 0), 2.4, 75.0, 30.0, 45.0, 64, 64)
    out = scene.gt_render(cam, 0.5)
    assert (out.alpha > 0.5).sum() > 50


def test_scene_validation():
    with pytest.raises(ConfigError):
        make_arm_scene(splats=1)
    with pytest.raises(ConfigError):
        make_arm_scene(frames=1)


def test_scene_from_params_roundtrip(scene):
    rebuilt = scene_from_params(scene.params)
    assert np.array_equal(rebuilt.images, scene.images)


def test_scene_from_params_rejects_unknown():
    with pytest.raises(ConfigError):
        scene_from_params({"seed": 0, "bogus": 1})


def test_manifest_files_exist(scene, tmp_path):
    path = write_manifest(scene, tmp_path)
    assert path.exists()
    assert (tmp_path / "images" / "frame_000.png").exists()
    assert (tmp_path / "masks" / "frame_007.png").exists()


class TestArmOracleProvider:
    def test_recovers_frame_times(self, scene):
        provider = ArmOracleProvider(scene)
        rng = np.random.default_rng(0)
        for i in (0, 3, 7):
            noisy = scene.images[i] + rng.normal(0.0, 0.002, scene.images[i].shape)
            assert provider._time_for(noisy) == float(scene.times[i])

    def test_gradient_points_at_truth(self, scene):
        # oracle contract: grad = 2 * (render - ground truth at that camera/time)
        provider = ArmOracleProvider(scene)
        cam = Camera.orbit((0, 0, 0), 2.4, 50.0, 20.0, 45.0, 64, 64)
        render = np.full((64, 64, 3), 0.25)
        result = provider(render, scene.images[2], cam, tau=0.5, seed=0)
        truth = scene.gt_render(cam, float(scene.times[2])).image
        np.testing.assert_allclose(result.grad, 2.0 * (render - truth), atol=1e-12)
        assert result.weight == 1.0

    def test_rejects_wrong_reference_shape(self, scene):
        provider = ArmOracleProvider(scene)
        with pytest.raises(DataError):
            provider._time_for(np.zeros((16, 16, 3)))
