"""Dataset ingestion: a JSON manifest of masked frames with cameras.

A manifest lists ordered frame records (image path, mask path, time,
optional camera), global intrinsics, and a scene-extent hint. Times are
normalized to [0, 1] on load so the rig's time embedding sees a fixed
domain regardless of how the source numbered its frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import Camera
from .errors import DataError


@dataclass
class Frame:
    """One training observation: image, binary mask, time, camera."""

    image: np.ndarray
    mask: np.ndarray
    time: float
    camera: Camera


@dataclass
class Dataset:
    """In-memory sequence the trainer consumes."""

    frames: list
    scene_extent: float
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    synthetic: dict | None = None

    def __post_init__(self):
        if not self.frames:
            raise DataError("dataset has no frames")
        h, w = self.frames[0].image.shape[:2]
        for i, frame in enumerate(self.frames):
            if frame.image.shape != (h, w, 3):
                raise DataError(f"frame {i}: image shape {frame.image.shape} differs")
            if frame.mask.shape != (h, w):
                raise DataError(f"frame {i}: mask shape {frame.mask.shape} differs")
        times = [f.time for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError("frame times must be strictly increasing")
        if self.scene_extent <= 0:
            raise DataError("scene extent must be positive")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].image.shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].image.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.frames])


def _normalize_times(raw: list[float]) -> list[float]:
    lo, hi = min(raw), max(raw)
    if hi > lo:
        return [(t - lo) / (hi - lo) for t in raw]
    return [0.5 for _ in raw]  # single frame sits at the embedding midpoint


def _load_image(path: Path, what: str) -> np.ndarray:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    with Image.open(path) as img:
        if what == "mask":
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def load_dataset(manifest_path) -> Dataset:
    """Read a manifest and decode every frame into memory."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc

    records = manifest.get("frames")
    if not records:
        raise DataError("manifest lists no frames")
    intrinsics = manifest.get("intrinsics")
    if not intrinsics:
        raise DataError("manifest is missing intrinsics")
    for key in ("width", "height", "fov_deg"):
        if key not in intrinsics:
            raise DataError(f"intrinsics missing {key!r}")
    width = int(intrinsics["width"])
    height = int(intrinsics["height"])

    root = manifest_path.parent
    raw_times = []
    for i, rec in enumerate(records):
        for key in ("image", "mask", "time"):
            if key not in rec:
                raise DataError(f"frame {i} is missing {key!r}")
        raw_times.append(float(rec["time"]))
    if any(b <= a for a, b in zip(raw_times, raw_times[1:])):
        raise DataError("frame times must be strictly increasing")
    times = _normalize_times(raw_times)

    frames = []
    default_spec = None
    for i, rec in enumerate(records):
        image = _load_image(root / rec["image"], "image")
        mask = _load_image(root / rec["mask"], "mask") > 0.5
        if image.shape[:2] != (height, width):
            raise DataError(
                f"frame {i}: image is {image.shape[1]}x{image.shape[0]}, "
                f"manifest says {width}x{height}"
            )
        if mask.shape != image.shape[:2]:
            raise DataError(f"frame {i}: mask and image dimensions differ")
        spec = rec.get("camera")
        if spec is None:
            # Monocular default: a fixed front camera; per-frame learnable
            # root transforms absorb the object motion.
            if default_spec is None:
                extent_hint = float(manifest.get("scene_extent", 1.0))
                default_spec = {
                    "position": [0.0, 0.0, 2.0 * extent_hint],
                    "look_at": [0.0, 0.0, 0.0],
                    "up": [0.0, 1.0, 0.0],
                    "fov_deg": float(intrinsics["fov_deg"]),
                }
            spec = default_spec
        camera = Camera.from_spec(spec, width, height)
        frames.append(Frame(image=image, mask=mask, time=times[i], camera=camera))

    extent = manifest.get("scene_extent")
    if extent is None:
        dists = [np.linalg.norm(f.camera.center) for f in frames]
        extent = 0.5 * float(np.mean(dists))
    background = np.asarray(manifest.get("background", [0.0, 0.0, 0.0]), dtype=np.float64)
    if background.shape != (3,):
        raise DataError("background must be an RGB triple")
    return Dataset(
        frames=frames,
        scene_extent=float(extent),
        background=background,
        synthetic=manifest.get("synthetic"),
    )


def dataset_from_scene(scene) -> Dataset:
    """Wrap an in-memory synthetic scene as a dataset (no disk round trip)."""
    frames = [
        Frame(
            image=scene.images[i],
            mask=scene.masks[i],
            time=float(scene.times[i]),
            camera=scene.cameras[i],
        )
        for i in range(scene.n_frames)
    ]
    return Dataset(
        frames=frames,
        scene_extent=scene.scene_extent,
        background=scene.background.copy(),
        synthetic=dict(scene.params),
    )
