"""Procedural two-segment arm scene for end-to-end tests and demos.

The scene is exact by construction: every splat belongs to one of two
rigid segments joined by a hinge at the origin, so ground-truth warps are
rigid motions, masks fall out of rendered alpha, and novel views at
arbitrary times and cameras come from the same renderer the trainer uses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import Camera
from .errors import ConfigError, DataError
from .gaussians import GaussianCloud
from .priors import OracleProvider
from .renderer import RenderConfig, render_forward


def _rot_z(angle_rad: float) -> np.ndarray:
    c = float(np.cos(angle_rad))
    s = float(np.sin(angle_rad))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _segment_splats(rng, count, x_lo, x_hi, radius, base_color, tint):
    """Sample splat centers inside a cylinder along x, colors graded along it."""
    x = rng.uniform(x_lo, x_hi, size=count)
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=count))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
    pos = np.stack([x, r * np.cos(phi), r * np.sin(phi)], axis=1)
    along = (x - x_lo) / (x_hi - x_lo)
    colors = np.asarray(base_color)[None, :] + np.outer(along - 0.5, tint)
    colors = colors + rng.normal(0.0, 0.015, size=(count, 3))
    return pos, np.clip(colors, 0.05, 0.95)


@dataclass
class ArmScene:
    """Ground-truth articulated scene plus its rendered training sequence."""

    cloud: GaussianCloud
    labels: np.ndarray
    times: np.ndarray
    cameras: list
    images: np.ndarray
    masks: np.ndarray
    scene_extent: float
    max_angle_deg: float
    background: np.ndarray
    config: RenderConfig
    params: dict

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def bone_transforms(self, t: float):
        """Rigid transform per segment at time t: segment 1 hinges about z."""
        angle = np.radians(self.max_angle_deg) * float(t)
        rotations = np.stack([np.eye(3), _rot_z(angle)])
        return rotations, np.zeros((2, 3))

    def warped_arrays(self, t: float):
        """Ground-truth warped means and covariances at time t."""
        rotations, translations = self.bone_transforms(t)
        per = rotations[self.labels]
        means = np.einsum("nij,nj->ni", per, self.cloud.positions.data)
        means = means + translations[self.labels]
        cov = self.cloud.build_covariance()
        covs = np.einsum("nij,njk,nlk->nil", per, cov, per)
        return means, covs

    def gt_render(self, camera: Camera, t: float):
        """Render the ground truth at time t from any camera."""
        means, covs = self.warped_arrays(t)
        return render_forward(
            means,
            covs,
            self.cloud.opacities(),
            self.cloud.colors.data,
            camera,
            self.background,
            self.config,
        )


def make_arm_scene(
    seed: int = 0,
    splats: int = 2000,
    frames: int = 20,
    size: int = 128,
    max_angle_deg: float = 40.0,
    fov_deg: float = 45.0,
    orbit_span_deg: float = 40.0,
    elevation_deg: float = 12.0,
) -> ArmScene:
    """Build the two-segment arm and render its training sequence.

    Segment 0 spans x in [-0.55, 0], segment 1 spans [0, 0.55]; over the
    sequence segment 1 rotates about the hinge from 0 to max_angle_deg
    while the camera sweeps a small azimuth arc.
    """
    if splats < 2:
        raise ConfigError("need at least one splat per segment")
    if frames < 2:
        raise ConfigError("need at least two frames")
    rng = np.random.default_rng(seed)
    half = splats // 2
    length = 0.55
    radius = 0.11
    pos0, col0 = _segment_splats(
        rng, half, -length, 0.0, radius, (0.85, 0.45, 0.20), (0.10, 0.25, 0.05)
    )
    pos1, col1 = _segment_splats(
        rng, splats - half, 0.0, length, radius, (0.20, 0.55, 0.80), (0.05, 0.20, -0.25)
    )
    positions = np.concatenate([pos0, pos1])
    colors = np.concatenate([col0, col1])
    labels = np.repeat([0, 1], [half, splats - half])

    sigma = np.exp(rng.normal(np.log(0.028), 0.15, size=splats))
    log_scales = np.log(sigma)[:, None] + rng.uniform(-0.1, 0.1, size=(splats, 3))
    quats = rng.normal(size=(splats, 4))
    logits = np.full(splats, 3.0)  # sigmoid(3) ~ 0.95, crisp silhouettes
    extent = 1.2
    cloud = GaussianCloud(positions, quats, log_scales, logits, colors, extent)

    times = np.linspace(0.0, 1.0, frames)
    azimuths = np.linspace(-0.5 * orbit_span_deg, 0.5 * orbit_span_deg, frames)
    cameras = [
        Camera.orbit(
            target=(0.0, 0.0, 0.0),
            radius=2.0 * extent,
            azimuth_deg=float(az),
            elevation_deg=elevation_deg,
            fov_deg=fov_deg,
            width=size,
            height=size,
        )
        for az in azimuths
    ]

    background = np.zeros(3)
    config = RenderConfig()
    scene = ArmScene(
        cloud=cloud,
        labels=labels,
        times=times,
        cameras=cameras,
        images=np.zeros((frames, size, size, 3)),
        masks=np.zeros((frames, size, size), dtype=bool),
        scene_extent=extent,
        max_angle_deg=max_angle_deg,
        background=background,
        config=config,
        params={
            "seed": seed,
            "splats": splats,
            "frames": frames,
            "size": size,
            "max_angle_deg": max_angle_deg,
            "fov_deg": fov_deg,
            "orbit_span_deg": orbit_span_deg,
            "elevation_deg": elevation_deg,
        },
    )
    for i, t in enumerate(times):
        out = scene.gt_render(cameras[i], float(t))
        scene.images[i] = out.image
        scene.masks[i] = out.alpha > 0.5
    return scene


def _save_png(path: Path, array: np.ndarray) -> None:
    data = np.clip(array, 0.0, 1.0)
    Image.fromarray((data * 255.0).round().astype(np.uint8)).save(path)


def write_manifest(scene: ArmScene, out_dir) -> Path:
    """Write the scene to disk as PNG frames plus a dataset manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    frames = []
    for i in range(scene.n_frames):
        image_rel = f"images/frame_{i:03d}.png"
        mask_rel = f"masks/frame_{i:03d}.png"
        _save_png(out_dir / image_rel, scene.images[i])
        mask = scene.masks[i].astype(np.uint8) * 255
        Image.fromarray(mask, mode="L").save(out_dir / mask_rel)
        frames.append(
            {
                "image": image_rel,
                "mask": mask_rel,
                "time": float(scene.times[i]),
                "camera": scene.cameras[i].to_spec(),
            }
        )
    height, width = scene.images.shape[1:3]
    manifest = {
        "intrinsics": {
            "width": int(width),
            "height": int(height),
            "fov_deg": float(scene.params["fov_deg"]),
        },
        "scene_extent": float(scene.scene_extent),
        "background": [float(c) for c in scene.background],
        "frames": frames,
        "synthetic": dict(scene.params),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def scene_from_params(params: dict) -> ArmScene:
    """Rebuild a scene from the parameter block a manifest embeds."""
    known = {
        "seed",
        "splats",
        "frames",
        "size",
        "max_angle_deg",
        "fov_deg",
        "orbit_span_deg",
        "elevation_deg",
    }
    extra = set(params) - known
    if extra:
        raise ConfigError(f"unknown synthetic-scene keys: {sorted(extra)}")
    return make_arm_scene(**params)


class ArmOracleProvider:
    """Ideal prior: the gradient toward the true render from any camera.

    The provider contract only carries the reference image, so the active
    time is recovered by matching the reference against the known training
    frames; nearest mean-squared difference tolerates 8-bit quantization.
    """

    def __init__(self, scene: ArmScene):
        self.scene = scene

    def _time_for(self, reference: np.ndarray) -> float:
        if reference.shape != self.scene.images.shape[1:]:
            raise DataError(
                f"reference shape {reference.shape} does not match scene frames"
            )
        diffs = np.mean((self.scene.images - reference[None]) ** 2, axis=(1, 2, 3))
        return float(self.scene.times[int(np.argmin(diffs))])

    def __call__(self, render, reference, camera, tau, seed):
        t = self._time_for(np.asarray(reference))
        oracle = OracleProvider(lambda cam: self.scene.gt_render(cam, t).image)
        return oracle(render, reference, camera, tau, seed)
