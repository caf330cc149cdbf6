"""Estimator facade: fit, render, score, save, and export with one object.

Follows the scikit-learn convention: the constructor stores
hyperparameters verbatim, ``fit`` does the work, fitted attributes carry
a trailing underscore, and ``get_params``/``set_params`` make the model
compose with standard tooling.
"""

from __future__ import annotations

import inspect
import logging
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .losses import LossWeights
from .renderer import RenderConfig
from .rig import BoneRigConfig, pose_deltas
from .train import TrainConfig, Trainer, evaluate_frames, render_model

log = logging.getLogger("bags")


class AnimatableSplatModel:
    """Animatable Gaussian-splat model fitted from a masked image sequence.

    Args:
        warmup_iterations: static canonical-cloud fitting steps.
        joint_iterations: articulated training steps over the curriculum.
        init_splats: cloud size seeded from the reference-frame mask.
        bones, rig_freqs, rig_hidden, rig_layers: bone-rig architecture.
        weights: LossWeights, or None for the defaults.
        prior: score-distillation provider; None means ZeroProvider.
        render_config: RenderConfig override for training and inference.
        log_path: JSONL metrics destination, or None to skip.
        seed: RNG seed for the whole run.

        The remaining keywords mirror the training schedule: tau endpoints,
        curriculum growth, per-group learning rates, densification, and the
        camera-sampling bands for score distillation.
    """

    def __init__(
        self,
        *,
        warmup_iterations: int = 2000,
        joint_iterations: int = 8000,
        init_splats: int = 800,
        bones: int = 16,
        rig_freqs: int = 6,
        rig_hidden: int = 128,
        rig_layers: int = 4,
        weights: LossWeights | None = None,
        warmup_tau: tuple = (0.98, 0.02),
        joint_tau: tuple = (0.5, 0.02),
        curriculum_radius: int = 3,
        curriculum_interval: int = 50,
        curriculum_frames_per_interval: int = 2,
        lr_position: float = 1.6e-4,
        lr_cloud: float = 2.5e-3,
        lr_opacity: float = 5e-2,
        lr_color: float = 1e-2,
        lr_rig: float = 5e-4,
        lr_root: float = 1e-4,
        densify_interval: int = 100,
        densify_start: int = 200,
        densify_grad_threshold: float = 2e-4,
        prune_opacity: float = 0.005,
        sds_azimuth: tuple = (0.0, 360.0),
        sds_elevation: tuple = (-10.0, 45.0),
        sds_radius: tuple = (1.8, 2.6),
        reference_frame: int | None = None,
        eval_interval: int = 500,
        prior=None,
        render_config: RenderConfig | None = None,
        log_path=None,
        seed: int = 0,
    ):
        args = locals()
        for name in self._param_names():
            setattr(self, name, args[name])

    # -- sklearn plumbing ------------------------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "AnimatableSplatModel":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ConfigError(f"unknown parameter {key!r} for AnimatableSplatModel")
            setattr(self, key, value)
        return self

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            warmup_iterations=self.warmup_iterations,
            joint_iterations=self.joint_iterations,
            weights=self.weights if self.weights is not None else LossWeights(),
            warmup_tau=tuple(self.warmup_tau),
            joint_tau=tuple(self.joint_tau),
            curriculum_radius=self.curriculum_radius,
            curriculum_interval=self.curriculum_interval,
            curriculum_frames_per_interval=self.curriculum_frames_per_interval,
            lr_position=self.lr_position,
            lr_cloud=self.lr_cloud,
            lr_opacity=self.lr_opacity,
            lr_color=self.lr_color,
            lr_rig=self.lr_rig,
            lr_root=self.lr_root,
            densify_interval=self.densify_interval,
            densify_start=self.densify_start,
            densify_grad_threshold=self.densify_grad_threshold,
            prune_opacity=self.prune_opacity,
            init_splats=self.init_splats,
            rig=BoneRigConfig(
                bones=self.bones,
                freqs=self.rig_freqs,
                hidden=self.rig_hidden,
                layers=self.rig_layers,
            ),
            sds_azimuth=tuple(self.sds_azimuth),
            sds_elevation=tuple(self.sds_elevation),
            sds_radius=tuple(self.sds_radius),
            reference_frame=self.reference_frame,
            eval_interval=self.eval_interval,
            seed=self.seed,
        )

    # -- fitting ---------------------------------------------------------------

    def fit(self, dataset) -> "AnimatableSplatModel":
        """Run both training stages on a Dataset or a manifest path."""
        if isinstance(dataset, (str, Path)):
            from .datasets import load_dataset

            dataset = load_dataset(dataset)
        trainer = Trainer(
            dataset,
            self._train_config(),
            provider=self.prior,
            render_config=self.render_config,
            log_path=self.log_path,
        )
        trainer.fit()
        self._adopt(trainer, dataset)
        self.metrics_ = trainer.evaluate()
        return self

    def _adopt(self, trainer: Trainer, dataset) -> None:
        self.trainer_ = trainer
        self.dataset_ = dataset
        self.cloud_ = trainer.cloud
        self.rig_ = trainer.rig
        self.root_quats_ = trainer.root_quats
        self.root_trans_ = trainer.root_trans
        self.config_ = trainer.config
        self.render_config_ = trainer.render_config
        self.background_ = np.asarray(dataset.background, dtype=np.float64)
        self.meta_ = {
            "width": dataset.width,
            "height": dataset.height,
            "scene_extent": float(dataset.scene_extent),
            "n_frames": len(dataset),
            "times": [float(t) for t in dataset.times],
        }

    def _require_fitted(self) -> None:
        if not hasattr(self, "cloud_"):
            raise ConfigError("model is not fitted; call fit() or load a checkpoint")

    # -- inference ---------------------------------------------------------------

    def render(self, t: float, camera):
        """Render at time t from any camera; t outside [0, 1] is clamped."""
        self._require_fitted()
        t = float(t)
        if t < 0.0 or t > 1.0:
            log.warning("time %.3f outside the trained range [0, 1]; clamping", t)
            t = min(max(t, 0.0), 1.0)
        out, _ = render_model(
            self.cloud_, self.rig_, t, camera, self.background_, self.render_config_
        )
        return out

    def render_posed(self, quats, translations, camera):
        """Render the canonical model under user-supplied per-bone poses."""
        self._require_fitted()
        if self.rig_ is None:
            raise ConfigError("model has no rig; fit with joint training first")
        deltas = pose_deltas(self.rig_.canonical_pose(), quats, translations)
        out, _ = render_model(
            self.cloud_,
            self.rig_,
            None,
            camera,
            self.background_,
            self.render_config_,
            deltas=deltas,
        )
        return out

    def evaluate(self, dataset=None) -> dict:
        """Metric report {psnr, iou, rigid, per_frame} on a dataset."""
        self._require_fitted()
        if dataset is None:
            dataset = getattr(self, "dataset_", None)
        if dataset is None:
            raise DataError("no dataset attached; pass one to evaluate()")
        roots = None
        if len(dataset) == len(self.root_quats_):
            roots = list(zip(self.root_quats_, self.root_trans_))
        return evaluate_frames(
            self.cloud_, self.rig_, dataset, self.render_config_, roots=roots
        )

    def score(self, dataset=None) -> float:
        """Mean training-frame PSNR; higher is better."""
        return self.evaluate(dataset)["psnr"]

    # -- artifacts ---------------------------------------------------------------

    def save(self, path) -> Path:
        """Write a checksummed checkpoint; see docs/formats.md."""
        from .checkpoints import save_checkpoint

        self._require_fitted()
        return save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "AnimatableSplatModel":
        """Reload a checkpoint saved by :meth:`save`."""
        from .checkpoints import load_checkpoint

        return load_checkpoint(path)

    def export_bundle(self, path) -> Path:
        """Write the viewer bundle (binary + JSON sidecar)."""
        from .viewer_bundle import export_bundle

        self._require_fitted()
        if self.rig_ is None:
            raise ConfigError("model has no rig; fit with joint training first")
        return export_bundle(
            self.cloud_,
            self.rig_,
            path,
            background=self.background_,
            scene_extent=self.meta_["scene_extent"],
        )
