"""Two-stage optimization: warm-up on a reference frame, then joint training.

Warm-up fits a static canonical cloud to one frame with densification.
Joint training then optimizes the cloud, the bone rig, the canonical
embedding, and per-frame root transforms against a frame curriculum that
grows outward from the reference, with score-distillation gradients from
randomly sampled cameras and a rigidity penalty on the warp Jacobians.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import rig as rigmod
from .cameras import Camera
from .errors import ConfigError, NumericsError
from .gaussians import GaussianCloud
from .linalg import quat_to_rotmat_t
from .losses import (
    LossWeights,
    l1_loss,
    mask_loss,
    perceptual_loss,
    rigid_loss,
    sds_step,
    total_loss,
)
from .priors import ZeroProvider
from .renderer import RenderConfig, render_backward, render_forward
from .rig import BoneRig, BoneRigConfig

log = logging.getLogger("bags")

PSNR_CAP = 100.0


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both stages; defaults target real captures."""

    warmup_iterations: int = 2000
    joint_iterations: int = 8000
    weights: LossWeights = field(default_factory=LossWeights)
    warmup_tau: tuple = (0.98, 0.02)
    joint_tau: tuple = (0.5, 0.02)
    curriculum_radius: int = 3
    curriculum_interval: int = 50
    curriculum_frames_per_interval: int = 2
    lr_position: float = 1.6e-4  # multiplied by scene extent
    lr_cloud: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 1e-2
    lr_rig: float = 5e-4
    lr_root: float = 1e-4
    densify_interval: int = 100
    densify_start: int = 200
    densify_grad_threshold: float = 2e-4
    prune_opacity: float = 0.005
    init_splats: int = 800
    rig: BoneRigConfig = field(default_factory=BoneRigConfig)
    sds_azimuth: tuple = (0.0, 360.0)
    sds_elevation: tuple = (-10.0, 45.0)
    sds_radius: tuple = (1.8, 2.6)  # multiplied by scene extent
    reference_frame: int | None = None
    eval_interval: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.warmup_iterations < 0 or self.joint_iterations < 0:
            raise ConfigError("iteration counts must be >= 0")
        for lo, hi in (self.warmup_tau, self.joint_tau):
            if not (0.0 < lo < 1.0 and 0.0 < hi < 1.0):
                raise ConfigError("tau endpoints must lie in (0, 1)")
        if self.curriculum_radius < 0:
            raise ConfigError("curriculum radius must be >= 0")
        if self.curriculum_interval < 1 or self.curriculum_frames_per_interval < 1:
            raise ConfigError("curriculum expansion parameters must be >= 1")
        for name in ("lr_position", "lr_cloud", "lr_opacity", "lr_color", "lr_rig", "lr_root"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.densify_interval < 1:
            raise ConfigError("densify interval must be >= 1")
        if self.init_splats < 1:
            raise ConfigError("init_splats must be >= 1")
        for lo, hi in (self.sds_elevation, self.sds_radius, self.sds_azimuth):
            if hi < lo:
                raise ConfigError("sampling ranges must satisfy low <= high")
        if self.eval_interval < 1:
            raise ConfigError("eval interval must be >= 1")


@dataclass
class TrainState:
    """Mutable progress shared across stages."""

    stage: str = "init"
    iteration: int = 0
    active_frames: list = field(default_factory=list)
    reference_frame: int = 0
    metric_history: list = field(default_factory=list)


def tau_schedule(stage: str, iteration: float, config: TrainConfig) -> float:
    """Noise-level schedule: linear from the stage's start to its end value."""
    if stage == "warmup":
        start, end = config.warmup_tau
        total = config.warmup_iterations
    elif stage == "joint":
        start, end = config.joint_tau
        total = config.joint_iterations
    else:
        raise ConfigError(f"unknown stage {stage!r}")
    if total <= 1:
        return float(start)
    frac = min(max(float(iteration) / (total - 1), 0.0), 1.0)
    # affine blend so both endpoints come out exact
    return float((1.0 - frac) * start + frac * end)


def curriculum_frames(reference: int, total: int, iteration: int, config: TrainConfig) -> list[int]:
    """Active frame indices: nearest-to-reference window, growing over time.

    Starts with the (2*radius + 1) temporally nearest frames (count kept at
    sequence boundaries) and adds the nearest unused frames every interval
    until the whole sequence is active.
    """
    want = 1 + 2 * config.curriculum_radius
    want += config.curriculum_frames_per_interval * (iteration // config.curriculum_interval)
    want = min(want, total)
    order = sorted(range(total), key=lambda i: (abs(i - reference), i))
    return sorted(order[:want])


def sample_sds_camera(
    rng: np.random.Generator,
    config: TrainConfig,
    centroid: np.ndarray,
    extent: float,
    fov_deg: float,
    width: int,
    height: int,
) -> Camera:
    """Random look-at camera on a sphere around the cloud centroid."""
    azimuth = rng.uniform(*config.sds_azimuth)
    elevation = rng.uniform(*config.sds_elevation)
    radius = rng.uniform(*config.sds_radius) * extent
    return Camera.orbit(
        target=centroid,
        radius=float(radius),
        azimuth_deg=float(azimuth),
        elevation_deg=float(elevation),
        fov_deg=fov_deg,
        width=width,
        height=height,
    )


def psnr(render: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio over the full image, capped for exact matches."""
    mse = float(np.mean((render - target) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def mask_iou(alpha: np.ndarray, mask: np.ndarray, threshold: float = 0.5) -> float:
    """Intersection-over-union of the rendered silhouette vs the mask."""
    pred = alpha > threshold
    gt = np.asarray(mask) > 0.5
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def _accumulate(tensor: ad.Tensor, grad: np.ndarray) -> None:
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64)
    else:
        tensor.grad = tensor.grad + grad


def warp_cloud(cloud: GaussianCloud, rig: BoneRig, t: float | None = None, deltas=None, root=None):
    """Warp the cloud by the rig pose at time t (or by explicit deltas).

    ``root`` is an optional (quaternion tensor, translation tensor) pair
    composed after the bone warp. Everything stays on the tape so the
    trainer can backpropagate through the result.
    """
    canonical = rig.canonical_pose()
    if deltas is None:
        if t is None:
            raise ConfigError("warp_cloud needs a time or explicit deltas")
        deltas = rigmod.bone_delta_transforms(canonical, rig.predict_bone_pose(float(t)))
    warp = rigmod.warp_gaussians(cloud.positions, cloud.covariance_t(), deltas, canonical)
    if root is not None:
        warp = rigmod.apply_root_transform(warp, quat_to_rotmat_t(root[0]), root[1])
    return warp


def render_model(
    cloud: GaussianCloud,
    rig: BoneRig | None,
    t: float | None,
    camera: Camera,
    background: np.ndarray,
    config: RenderConfig,
    root=None,
    deltas=None,
):
    """Render the model from any camera; returns (output, warp Jacobians).

    With no rig the canonical cloud renders statically and the Jacobians
    are None.
    """
    if rig is None:
        means = cloud.positions.data
        covs = cloud.build_covariance()
        jac = None
    else:
        warp = warp_cloud(cloud, rig, t=t, deltas=deltas, root=root)
        means, covs, jac = warp.means.data, warp.covariances.data, warp.jacobian.data
    out = render_forward(
        means, covs, cloud.opacities(), cloud.colors.data, camera, background, config
    )
    return out, jac


class Trainer:
    """Owns the model state and runs the two stages in order."""

    def __init__(
        self,
        dataset,
        config: TrainConfig | None = None,
        provider=None,
        render_config: RenderConfig | None = None,
        log_path=None,
    ):
        from .optim import Adam

        self.dataset = dataset
        self.config = config if config is not None else TrainConfig()
        self.provider = provider if provider is not None else ZeroProvider()
        self.render_config = render_config if render_config is not None else RenderConfig()
        self.log_path = Path(log_path) if log_path is not None else None
        self.rng = np.random.default_rng(self.config.seed)

        reference = self.config.reference_frame
        if reference is None:
            reference = len(dataset) // 2
        if not (0 <= reference < len(dataset)):
            raise ConfigError(f"reference frame {reference} outside dataset")
        self.state = TrainState(reference_frame=reference)

        ref = dataset.frames[reference]
        self.cloud = GaussianCloud.init_from_mask(
            ref.image,
            ref.mask,
            ref.camera,
            self.config.init_splats,
            self.rng,
            scene_extent=dataset.scene_extent,
        )
        self.rig: BoneRig | None = None
        self.root_quats = [
            ad.Tensor(np.array([1.0, 0.0, 0.0, 0.0]), requires_grad=True)
            for _ in range(len(dataset))
        ]
        self.root_trans = [
            ad.Tensor(np.zeros(3), requires_grad=True) for _ in range(len(dataset))
        ]
        self._fov = ref.camera.to_spec()["fov_deg"]

        self.opt_cloud = Adam(
            [
                {"params": [self.cloud.positions], "lr": self.config.lr_position * dataset.scene_extent, "name": "positions"},
                {"params": [self.cloud.quats, self.cloud.log_scales], "lr": self.config.lr_cloud, "name": "cloud"},
                {"params": [self.cloud.opacity_logits], "lr": self.config.lr_opacity, "name": "opacity"},
                {"params": [self.cloud.colors], "lr": self.config.lr_color, "name": "color"},
            ]
        )
        self.opt_motion = None

    # -- stage drivers -------------------------------------------------------

    def fit(self) -> "Trainer":
        self.run_warmup()
        self.run_joint()
        self.state.stage = "done"
        return self

    def run_warmup(self) -> None:
        self.state.stage = "warmup"
        cfg = self.config
        for i in range(cfg.warmup_iterations):
            self.state.iteration = i
            terms = self._warmup_iter(i)
            self._check_divergence(terms)
            due = (i + 1) % cfg.densify_interval == 0
            if due and i + 1 >= cfg.densify_start and i + 1 < cfg.warmup_iterations:
                self._densify()
            self._maybe_log(terms)

    def run_joint(self) -> None:
        self._ensure_rig()
        self.state.stage = "joint"
        cfg = self.config
        for i in range(cfg.joint_iterations):
            self.state.iteration = i
            self.state.active_frames = curriculum_frames(
                self.state.reference_frame, len(self.dataset), i, cfg
            )
            terms = self._joint_iter(i)
            self._check_divergence(terms)
            self._maybe_log(terms)

    def _ensure_rig(self) -> None:
        if self.rig is None:
            self.rig = BoneRig(
                self.config.rig,
                self.dataset.scene_extent,
                init_positions=self.cloud.positions.data,
                rng=self.rng,
            )
            from .optim import Adam

            self.opt_motion = Adam(
                [
                    {"params": self.rig.parameters(), "lr": self.config.lr_rig, "name": "rig"},
                    {"params": self.root_quats + self.root_trans, "lr": self.config.lr_root, "name": "roots"},
                ]
            )

    # -- single iterations ---------------------------------------------------

    def _zero_grads(self) -> None:
        self.opt_cloud.zero_grad()
        if self.opt_motion is not None:
            self.opt_motion.zero_grad()

    def _recon_grads(self, out, frame):
        """Photometric losses vs one frame; returns terms and image/alpha grads."""
        w = self.config.weights
        l1_val, g_l1 = l1_loss(out.image, frame.image, frame.mask)
        mask_val, g_mask = mask_loss(out.alpha, frame.mask)
        perc_val, g_perc = perceptual_loss(out.image, frame.image)
        g_image = w.l1 * g_l1 + w.perceptual * g_perc
        g_alpha = w.mask * g_mask
        terms = {"l1": l1_val, "mask": mask_val, "perceptual": perc_val}
        return terms, g_image, g_alpha

    def _sds_render_grads(self, means, covs, opacity, colors, reference, tau):
        """Render from a random camera and query the prior for a gradient."""
        cam = sample_sds_camera(
            self.rng,
            self.config,
            means.mean(axis=0),
            self.dataset.scene_extent,
            self._fov,
            self.dataset.width,
            self.dataset.height,
        )
        out = render_forward(
            means, covs, opacity, colors, cam, self.dataset.background, self.render_config
        )
        seed = int(self.rng.integers(0, 2**31 - 1))
        g_image = sds_step(
            self.provider,
            out.image,
            reference,
            cam,
            tau,
            weight=self.config.weights.sds,
            seed=seed,
        )
        return out, g_image

    def _warmup_iter(self, i: int) -> dict:
        frame = self.dataset.frames[self.state.reference_frame]
        self._zero_grads()
        cov_t = self.cloud.covariance_t()
        opac_t = self.cloud.opacities_t()
        out = render_forward(
            self.cloud.positions.data,
            cov_t.data,
            opac_t.data,
            self.cloud.colors.data,
            frame.camera,
            self.dataset.background,
            self.render_config,
        )
        terms, g_image, g_alpha = self._recon_grads(out, frame)
        grads = render_backward(out, g_image, g_alpha)

        tau = tau_schedule("warmup", i, self.config)
        out_sds, g_sds = self._sds_render_grads(
            self.cloud.positions.data,
            cov_t.data,
            opac_t.data,
            self.cloud.colors.data,
            frame.image,
            tau,
        )
        grads_sds = render_backward(out_sds, g_sds)

        ad.backward_from(
            [
                (cov_t, grads.d_cov3d + grads_sds.d_cov3d),
                (opac_t, grads.d_opacity + grads_sds.d_opacity),
            ]
        )
        _accumulate(self.cloud.positions, grads.d_means3d + grads_sds.d_means3d)
        _accumulate(self.cloud.colors, grads.d_color + grads_sds.d_color)

        self.cloud.accumulate_stats(grads.view_grad_mag, grads.d_means3d, grads.visible)
        self.cloud.accumulate_stats(
            grads_sds.view_grad_mag, grads_sds.d_means3d, grads_sds.visible
        )
        self.opt_cloud.step()
        self.cloud.renormalize()
        return terms

    def _joint_iter(self, i: int) -> dict:
        cfg = self.config
        idx = int(self.rng.choice(self.state.active_frames))
        frame = self.dataset.frames[idx]
        self._zero_grads()

        warp = self._warp_at(frame.time, idx)
        opac_t = self.cloud.opacities_t()
        out = render_forward(
            warp.means.data,
            warp.covariances.data,
            opac_t.data,
            self.cloud.colors.data,
            frame.camera,
            self.dataset.background,
            self.render_config,
        )
        terms, g_image, g_alpha = self._recon_grads(out, frame)
        grads = render_backward(out, g_image, g_alpha)

        tau = tau_schedule("joint", i, cfg)
        out_sds, g_sds = self._sds_render_grads(
            warp.means.data,
            warp.covariances.data,
            opac_t.data,
            self.cloud.colors.data,
            frame.image,
            tau,
        )
        grads_sds = render_backward(out_sds, g_sds)

        rigid_val, g_jac = rigid_loss(warp.jacobian.data)
        terms["rigid"] = rigid_val

        ad.backward_from(
            [
                (warp.means, grads.d_means3d + grads_sds.d_means3d),
                (warp.covariances, grads.d_cov3d + grads_sds.d_cov3d),
                (warp.jacobian, cfg.weights.rigid * g_jac),
                (opac_t, grads.d_opacity + grads_sds.d_opacity),
            ]
        )
        _accumulate(self.cloud.colors, grads.d_color + grads_sds.d_color)

        self.opt_cloud.step()
        self.opt_motion.step()
        self.cloud.renormalize()
        return terms

    def _warp_at(self, t: float, frame_idx: int | None):
        """Warped cloud tensors at time t, with that frame's root applied."""
        root = None
        if frame_idx is not None:
            root = (self.root_quats[frame_idx], self.root_trans[frame_idx])
        return warp_cloud(self.cloud, self.rig, t=t, root=root)

    # -- maintenance ---------------------------------------------------------

    def _densify(self) -> None:
        old = {name: getattr(self.cloud, name) for name in self.cloud.PARAM_NAMES}
        row_map = self.cloud.densify_and_prune(
            self.rng,
            grad_threshold=self.config.densify_grad_threshold,
            prune_opacity=self.config.prune_opacity,
        )
        for name in self.cloud.PARAM_NAMES:
            self.opt_cloud.replace_param(old[name], getattr(self.cloud, name), row_map)

    def _check_divergence(self, terms: dict) -> None:
        total = total_loss(terms, self.config.weights)
        if np.isfinite(total):
            return
        dump = {
            "stage": self.state.stage,
            "iteration": self.state.iteration,
            "terms": {k: float(v) for k, v in terms.items()},
            "splats": int(self.cloud.n),
        }
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps({"event": "divergence", **dump}) + "\n")
        raise NumericsError(f"training diverged: {dump}")

    def _maybe_log(self, terms: dict) -> None:
        if (self.state.iteration + 1) % self.config.eval_interval != 0:
            return
        metrics = self.evaluate()
        record = {
            "stage": self.state.stage,
            "iteration": self.state.iteration,
            **{f"loss_{k}": float(v) for k, v in terms.items()},
            "psnr": metrics["psnr"],
            "iou": metrics["iou"],
            "rigid": metrics["rigid"],
            "splats": int(self.cloud.n),
        }
        self.state.metric_history.append(record)
        if self.log_path is not None:
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        log.info(
            "%s %d: psnr=%.2f iou=%.3f rigid=%.4f splats=%d",
            record["stage"],
            record["iteration"],
            record["psnr"],
            record["iou"],
            record["rigid"],
            record["splats"],
        )

    # -- inference and metrics -----------------------------------------------

    def render_time(self, t: float, camera: Camera, frame_idx: int | None = None):
        """Render the model at time t from any camera (no gradients)."""
        root = None
        if self.rig is not None and frame_idx is not None:
            root = (self.root_quats[frame_idx], self.root_trans[frame_idx])
        return render_model(
            self.cloud,
            self.rig,
            t,
            camera,
            self.dataset.background,
            self.render_config,
            root=root,
        )

    def evaluate(self, frames=None) -> dict:
        """Deterministic metrics over dataset frames (or a subset)."""
        roots = list(zip(self.root_quats, self.root_trans))
        return evaluate_frames(
            self.cloud, self.rig, self.dataset, self.render_config, roots=roots, frames=frames
        )


def evaluate_frames(
    cloud: GaussianCloud,
    rig: BoneRig | None,
    dataset,
    render_config: RenderConfig,
    roots=None,
    frames=None,
) -> dict:
    """PSNR, mask IoU, and rigidity per dataset frame, plus their means."""
    if frames is None:
        frames = range(len(dataset))
    per_frame = []
    for idx in frames:
        frame = dataset.frames[idx]
        root = None
        if rig is not None and roots is not None and idx < len(roots):
            root = roots[idx]
        out, jac = render_model(
            cloud, rig, frame.time, frame.camera, dataset.background, render_config, root=root
        )
        entry = {
            "frame": int(idx),
            "psnr": psnr(out.image, frame.image),
            "iou": mask_iou(out.alpha, frame.mask),
            "rigid": float(rigid_loss(jac)[0]) if jac is not None else 0.0,
        }
        per_frame.append(entry)
    return {
        "psnr": float(np.mean([e["psnr"] for e in per_frame])),
        "iou": float(np.mean([e["iou"] for e in per_frame])),
        "rigid": float(np.mean([e["rigid"] for e in per_frame])),
        "per_frame": per_frame,
    }
