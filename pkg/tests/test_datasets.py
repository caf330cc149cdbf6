"""Tests for manifest loading and dataset validation."""

import json

import numpy as np
import pytest

from bags.datasets import (
    Dataset,
    Frame,
    _normalize_times,
    dataset_from_scene,
    load_dataset,
)
from bags.errors import DataError
from bags.synthetic import make_arm_scene, write_manifest


@pytest.fixture(scope="module")
def scene():
    return make_arm_scene(splats=300, frames=4, size=48, seed=5)


@pytest.fixture(scope="module")
def manifest_dir(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("arm")
    write_manifest(scene, out)
    return out


def _frame(h=8, w=8, time=0.0):
    cam_scene = make_arm_scene(splats=2, frames=2, size=8, seed=0)
    return Frame(
        image=np.zeros((h, w, 3)),
        mask=np.zeros((h, w), dtype=bool),
        time=time,
        camera=cam_scene.cameras[0],
    )


def test_load_roundtrip(scene, manifest_dir):
    ds = load_dataset(manifest_dir / "manifest.json")
    assert len(ds) == 4
    assert ds.height == 48 and ds.width == 48
    assert ds.scene_extent == pytest.approx(scene.scene_extent)
    np.testing.assert_allclose(ds.times, scene.times, atol=1e-12)
    assert ds.synthetic is not None


def test_png_quantization_bound(scene, manifest_dir):
    # 8-bit storage costs at most half a level per channel
    ds = load_dataset(manifest_dir / "manifest.json")
    err = np.abs(ds.frames[1].image - scene.images[1]).max()
    assert err <= 0.5 / 255.0 + 1e-9
    assert np.array_equal(ds.frames[1].mask, scene.masks[1])


def test_masks_binarized(manifest_dir):
    ds = load_dataset(manifest_dir / "manifest.json")
    assert ds.frames[0].mask.dtype == bool


def test_cameras_roundtrip(scene, manifest_dir):
    ds = load_dataset(manifest_dir / "manifest.json")
    for frame, cam in zip(ds.frames, scene.cameras):
        np.testing.assert_allclose(frame.camera.center, cam.center, atol=1e-9)
        np.testing.assert_allclose(frame.camera.rotation, cam.rotation, atol=1e-9)


def test_missing_manifest():
    with pytest.raises(DataError):
        load_dataset("/nonexistent/manifest.json")


def test_invalid_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("not json {")
    with pytest.raises(DataError):
        load_dataset(path)


def test_missing_image_file(manifest_dir, tmp_path):
    spec = json.loads((manifest_dir / "manifest.json").read_text())
    spec["frames"][2]["image"] = "images/gone.png"
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(spec))
    (tmp_path / "images").symlink_to(manifest_dir / "images")
    (tmp_path / "masks").symlink_to(manifest_dir / "masks")
    with pytest.raises(DataError):
        load_dataset(path)


def test_non_monotone_times_rejected(manifest_dir, tmp_path):
    spec = json.loads((manifest_dir / "manifest.json").read_text())
    spec["frames"][1]["time"] = spec["frames"][3]["time"]
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(spec))
    (tmp_path / "images").symlink_to(manifest_dir / "images")
    (tmp_path / "masks").symlink_to(manifest_dir / "masks")
    with pytest.raises(DataError):
        load_dataset(path)


def test_default_camera_when_unspecified(manifest_dir, tmp_path):
    spec = json.loads((manifest_dir / "manifest.json").read_text())
    for frame in spec["frames"]:
        frame.pop("camera")
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(spec))
    (tmp_path / "images").symlink_to(manifest_dir / "images")
    (tmp_path / "masks").symlink_to(manifest_dir / "masks")
    ds = load_dataset(path)
    # fallback is a front view at twice the scene extent
    cam = ds.frames[0].camera
    np.testing.assert_allclose(cam.center, [0.0, 0.0, 2.0 * ds.scene_extent], atol=1e-9)


def test_extent_fallback_from_cameras(manifest_dir, tmp_path):
    spec = json.loads((manifest_dir / "manifest.json").read_text())
    spec.pop("scene_extent")
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(spec))
    (tmp_path / "images").symlink_to(manifest_dir / "images")
    (tmp_path / "masks").symlink_to(manifest_dir / "masks")
    ds = load_dataset(path)
    dists = [np.linalg.norm(f.camera.center) for f in ds.frames]
    assert ds.scene_extent == pytest.approx(0.5 * np.mean(dists))


def test_times_normalized_to_unit_interval():
    np.testing.assert_allclose(
        _normalize_times([3.0, 5.0, 9.0]), [0.0, 1.0 / 3.0, 1.0], atol=1e-12
    )


def test_single_frame_time_is_midpoint():
    assert _normalize_times([7.0]) == [0.5]


def test_empty_dataset_rejected():
    with pytest.raises(DataError):
        Dataset(frames=[], scene_extent=1.0)


def test_mask_shape_mismatch_names_frame():
    good = _frame()
    bad = _frame(time=1.0)
    bad.mask = np.zeros((4, 8), dtype=bool)
    with pytest.raises(DataError, match="frame 1"):
        Dataset(frames=[good, bad], scene_extent=1.0)


def test_image_shape_mismatch_rejected():
    bad = _frame()
    bad.image = np.zeros((8, 8))
    with pytest.raises(DataError):
        Dataset(frames=[bad], scene_extent=1.0)


def test_duplicate_times_rejected():
    frames = [_frame(time=0.0), _frame(time=0.0)]
    with pytest.raises(DataError):
        Dataset(frames=frames, scene_extent=1.0)


def test_nonpositive_extent_rejected():
    with pytest.raises(DataError):
        Dataset(frames=[_frame()], scene_extent=0.0)


def test_dataset_from_scene(scene):
    ds = dataset_from_scene(scene)
    assert len(ds) == scene.n_frames
    assert np.array_equal(ds.frames[0].image, scene.images[0])
    assert ds.synthetic == scene.params
