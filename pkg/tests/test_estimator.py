"""Tests for the estimator facade: params, fitting, rendering, posing."""

import logging

import numpy as np
import pytest

from bags.cameras import Camera
from bags.datasets import dataset_from_scene
from bags.errors import ConfigError
from bags.estimator import AnimatableSplatModel
from bags.priors import ZeroProvider
from bags.renderer import render_forward
from bags.synthetic import make_arm_scene, write_manifest


@pytest.fixture(scope="module")
def scene():
    return make_arm_scene(splats=250, frames=5, size=40, seed=8)


@pytest.fixture(scope="module")
def dataset(scene):
    return dataset_from_scene(scene)


def _tiny_model(**over):
    base = dict(
        warmup_iterations=8,
        joint_iterations=8,
        init_splats=120,
        bones=2,
        rig_freqs=2,
        rig_hidden=16,
        rig_layers=2,
        densify_start=10_000,
        eval_interval=10_000,
        prior=ZeroProvider(),
        seed=5,
    )
    base.update(over)
    return AnimatableSplatModel(**base)


@pytest.fixture(scope="module")
def fitted(dataset):
    return _tiny_model().fit(dataset)


class TestParams:
    def test_get_params_covers_constructor(self):
        model = _tiny_model()
        params = model.get_params()
        assert params["warmup_iterations"] == 8
        assert params["bones"] == 2
        assert "prior" in params and "seed" in params

    def test_clone_by_params(self):
        model = _tiny_model()
        twin = AnimatableSplatModel(**model.get_params())
        assert twin.get_params() == model.get_params()

    def test_set_params_returns_self(self):
        model = _tiny_model()
        assert model.set_params(seed=9) is model
        assert model.seed == 9

    def test_set_params_unknown_key(self):
        with pytest.raises(ConfigError):
            _tiny_model().set_params(not_a_knob=1)

    def test_defaults_are_training_defaults(self):
        from bags.train import TrainConfig

        model = AnimatableSplatModel()
        cfg = model._train_config()
        assert cfg.warmup_iterations == TrainConfig().warmup_iterations
        assert cfg.weights == TrainConfig().weights
        assert cfg.warmup_tau == (0.98, 0.02)
        assert cfg.joint_tau == (0.5, 0.02)


class TestFit:
    def test_fit_returns_self_with_state(self, fitted, dataset):
        assert fitted.cloud_ is not None
        assert fitted.rig_ is not None
        assert len(fitted.root_quats_) == len(dataset)
        assert fitted.metrics_["psnr"] > 0

    def test_fit_accepts_manifest_path(self, scene, tmp_path):
        write_manifest(scene, tmp_path)
        model = _tiny_model(warmup_iterations=2, joint_iterations=2).fit(
            str(tmp_path / "manifest.json")
        )
        assert model.meta_["n_frames"] == scene.n_frames

    def test_unfitted_render_rejected(self):
        cam = Camera.orbit((0, 0, 0), 2.0, 0.0, 0.0, 45.0, 32, 32)
        with pytest.raises(ConfigError):
            _tiny_model().render(0.5, cam)

    def test_score_is_mean_psnr(self, fitted, dataset):
        assert fitted.score(dataset) == pytest.approx(fitted.evaluate(dataset)["psnr"])

    def test_evaluate_needs_some_dataset(self):
        with pytest.raises(ConfigError):
            _tiny_model().evaluate()


class TestRender:
    def test_render_shape(self, fitted):
        cam = Camera.orbit((0, 0, 0), 2.4, 30.0, 10.0, 45.0, 40, 40)
        out = fitted.render(0.5, cam)
        assert out.image.shape == (40, 40, 3)
        assert out.alpha.shape == (40, 40)

    def test_time_clamped_with_warning(self, fitted, caplog):
        cam = Camera.orbit((0, 0, 0), 2.4, 30.0, 10.0, 45.0, 40, 40)
        with caplog.at_level(logging.WARNING):
            clamped = fitted.render(1.5, cam)
        assert any("clamp" in rec.message for rec in caplog.records)
        exact = fitted.render(1.0, cam)
        assert np.array_equal(clamped.image, exact.image)

    def test_render_deterministic(self, fitted):
        cam = Camera.orbit((0, 0, 0), 2.4, -20.0, 5.0, 45.0, 40, 40)
        a = fitted.render(0.25, cam)
        b = fitted.render(0.25, cam)
        assert np.array_equal(a.image, b.image)


class TestRenderPosed:
    def test_identity_pose_matches_canonical_cloud(self, fitted):
        # identity overrides must reproduce the raw canonical render bit
        # for bit; any drift means the pose path warps at rest
        cam = Camera.orbit((0, 0, 0), 2.4, 15.0, 10.0, 45.0, 40, 40)
        bones = fitted.rig_.config.bones
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (bones, 1))
        posed = fitted.render_posed(quats, np.zeros((bones, 3)), cam)
        static = render_forward(
            fitted.cloud_.positions.data,
            fitted.cloud_.build_covariance(),
            fitted.cloud_.opacities(),
            fitted.cloud_.colors.data,
            cam,
            fitted.background_,
            fitted.render_config_,
        )
        assert np.array_equal(posed.image, static.image)
        assert np.array_equal(posed.alpha, static.alpha)

    def test_rotated_pose_moves_pixels(self, fitted):
        from bags.linalg import axis_angle_quat

        cam = Camera.orbit((0, 0, 0), 2.4, 15.0, 10.0, 45.0, 40, 40)
        bones = fitted.rig_.config.bones
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (bones, 1))
        identity = fitted.render_posed(quats, np.zeros((bones, 3)), cam)
        quats[0] = axis_angle_quat(np.array([0.0, 0.0, 1.0]), np.radians(35.0))
        rotated = fitted.render_posed(quats, np.zeros((bones, 3)), cam)
        assert np.abs(rotated.image - identity.image).max() > 1e-3

    def test_posed_render_requires_rig(self, fitted):
        stripped = _tiny_model()
        stripped.cloud_ = fitted.cloud_
        stripped.rig_ = None
        cam = Camera.orbit((0, 0, 0), 2.4, 0.0, 0.0, 45.0, 40, 40)
        with pytest.raises(ConfigError):
            stripped.render_posed(np.zeros((2, 4)), np.zeros((2, 3)), cam)


class TestEvaluateRoots:
    def test_roots_applied_only_on_matching_dataset(self, fitted, scene):
        # a different-length dataset cannot reuse per-frame roots
        other = dataset_from_scene(make_arm_scene(splats=250, frames=3, size=40, seed=8))
        result = fitted.evaluate(other)
        assert len(result["per_frame"]) == 3
