"""Viewer bundle export: canonical splats with baked skinning weights.

The browser viewer re-poses the model with plain linear blend skinning, so
the bundle precomputes everything the MLPs would otherwise provide.
Binary layout (little-endian, documented bit-exactly in docs/formats.md):

    magic "BAGS" | u32 version | u32 n_splats | u32 n_bones
    | float32 arrays, tightly packed, in order:
      positions n*3 | quaternions n*4 | scales n*3 | opacities n
      | colors n*3 | weights n*b | bone_centers b*3 | bone_scales b*3
      | bone_rotations b*9

A JSON sidecar (same path + ".json") carries display metadata.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .rig import skinning_weights

MAGIC = b"BAGS"
VERSION = 1

_FIELDS = (
    ("positions", 3),
    ("quaternions", 4),
    ("scales", 3),
    ("opacities", 1),
    ("colors", 3),
)


def export_bundle(cloud, rig, path, background=None, scene_extent=1.0) -> Path:
    """Write the bundle binary plus its JSON sidecar; returns the path."""
    if rig is None:
        raise ConfigError("bundle export needs a skinned model (no rig present)")
    canonical = rig.canonical_pose()
    weights = skinning_weights(cloud.positions.data, canonical).data
    n = cloud.n
    b = canonical.bones

    arrays = [
        cloud.positions.data,
        cloud.quats.data,
        cloud.scales(),
        cloud.opacities(),
        cloud.colors.data,
        weights,
        canonical.centers.data,
        canonical.scales.data,
        canonical.rotations.data,
    ]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    blob = MAGIC + struct.pack("<III", VERSION, n, b) + payload

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

    sidecar = {
        "version": VERSION,
        "splats": int(n),
        "bones": int(b),
        "scene_extent": float(scene_extent),
        "background": [float(c) for c in (background if background is not None else np.zeros(3))],
        "time_range": [0.0, 1.0],
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return path


def parse_bundle(path) -> dict:
    """Reference parser: returns the arrays exactly as stored (float32)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"bundle not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated bundle")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes, expected {MAGIC!r}")
    version, n, b = struct.unpack("<III", blob[4:16])
    if version > VERSION:
        raise FormatError(f"{path}: version {version} is newer than supported ({VERSION})")
    counts = [(name, n * k) for name, k in _FIELDS]
    counts += [
        ("weights", n * b),
        ("bone_centers", b * 3),
        ("bone_scales", b * 3),
        ("bone_rotations", b * 9),
    ]
    total = sum(c for _, c in counts)
    payload = blob[16:]
    if len(payload) != total * 4:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {total * 4}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    out = {"version": version, "splats": n, "bones": b}
    offset = 0
    shapes = {
        "positions": (n, 3),
        "quaternions": (n, 4),
        "scales": (n, 3),
        "opacities": (n,),
        "colors": (n, 3),
        "weights": (n, b),
        "bone_centers": (b, 3),
        "bone_scales": (b, 3),
        "bone_rotations": (b, 3, 3),
    }
    for name, count in counts:
        out[name] = flat[offset : offset + count].reshape(shapes[name]).copy()
        offset += count
    return out
