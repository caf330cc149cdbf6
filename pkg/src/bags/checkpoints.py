"""Checkpoint serialization: one checksummed binary container per model.

Layout (all integers little-endian, documented bit-exactly in
docs/formats.md):

    magic "BAGC" | u32 version | u32 header_len | header JSON
    | raw array payload | u32 CRC32 of everything before it

The header JSON carries the train config, RNG state, dataset metadata, and
an array manifest (name, dtype, shape, byte offset). Arrays are stored
little-endian in manifest order. Saving is atomic (temp file + rename);
loading verifies magic, version, and checksum before touching content.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import FormatError
from .gaussians import GaussianCloud
from .losses import LossWeights
from .renderer import RenderConfig
from .rig import BoneRig, BoneRigConfig
from .train import TrainConfig

MAGIC = b"BAGC"
VERSION = 1


# -- generic container ---------------------------------------------------------


def write_blob(path, magic: bytes, version: int, meta: dict, arrays: dict) -> Path:
    """Atomically write a checksummed header-plus-arrays container."""
    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": str(np.dtype(a.dtype.newbyteorder("<")).str),
                "shape": list(a.shape),
                "offset": offset,
            }
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": manifest}, sort_keys=True).encode()
    blob = magic + struct.pack("<II", version, len(header)) + header + b"".join(chunks)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)

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
    return path


def read_blob(path, magic: bytes, max_version: int):
    """Read and verify a container; returns (version, meta, arrays)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(magic) + 12:
        raise FormatError(f"{path}: truncated container")
    if blob[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic bytes, expected {magic!r}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise FormatError(f"{path}: checksum mismatch, file is corrupt")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version > max_version:
        raise FormatError(
            f"{path}: version {version} is newer than supported ({max_version})"
        )
    header_end = 12 + header_len
    header = json.loads(blob[12:header_end].decode())
    payload = blob[header_end:-4]
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(payload):
            raise FormatError(f"{path}: array {entry['name']!r} overruns the payload")
        arr = np.frombuffer(payload[start:end], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="))
    return version, header["meta"], arrays


# -- config (de)serialization ----------------------------------------------------


def _config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def _config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    data["weights"] = LossWeights(**data["weights"])
    data["rig"] = BoneRigConfig(**data["rig"])
    for key in ("warmup_tau", "joint_tau", "sds_azimuth", "sds_elevation", "sds_radius"):
        data[key] = tuple(data[key])
    return TrainConfig(**data)


def _optimizer_arrays(prefix: str, opt) -> tuple[dict, list]:
    arrays = {}
    steps = []
    for g, group in enumerate(opt.groups):
        for p, param in enumerate(group["params"]):
            m, v = opt.state_rows(param)
            arrays[f"{prefix}.{g}.{p}.m"] = m
            arrays[f"{prefix}.{g}.{p}.v"] = v
            steps.append(opt._state[id(param)]["t"])
    return arrays, steps


# -- model checkpoints -----------------------------------------------------------


def save_checkpoint(model, path) -> Path:
    """Serialize a fitted model (see AnimatableSplatModel.save)."""
    trainer = getattr(model, "trainer_", None)
    if trainer is not None:
        stage = trainer.state.stage
        rng_state = trainer.rng.bit_generator.state
    else:
        # A loaded model re-saves the blobs it was loaded with, so
        # save -> load -> save stays byte-identical.
        stage = getattr(model, "stage_", "loaded")
        rng_state = getattr(model, "rng_state_", None)
    meta = {
        "config": _config_to_dict(model.config_),
        "render_config": asdict(model.render_config_),
        "dataset": model.meta_,
        "background": [float(c) for c in model.background_],
        "has_rig": model.rig_ is not None,
        "stage": stage,
        "rng_state": rng_state,
    }
    arrays = {}
    for name, value in model.cloud_.state_dict().items():
        arrays[f"cloud.{name}"] = value
    if model.rig_ is not None:
        rig_state = model.rig_.state_dict()
        meta["rig"] = {"base_precision": rig_state["base_precision"]}
        arrays["rig.embedding"] = rig_state["embedding"]
        for mlp in ("centers", "scales", "rotations"):
            for key, value in rig_state[mlp].items():
                arrays[f"rig.{mlp}.{key}"] = value
    arrays["roots.quats"] = np.stack([q.data for q in model.root_quats_])
    arrays["roots.trans"] = np.stack([t.data for t in model.root_trans_])
    if trainer is not None:
        opt_arrays, steps = _optimizer_arrays("opt.cloud", trainer.opt_cloud)
        meta["opt_cloud_steps"] = steps
        arrays.update(opt_arrays)
        if trainer.opt_motion is not None:
            opt_arrays, steps = _optimizer_arrays("opt.motion", trainer.opt_motion)
            meta["opt_motion_steps"] = steps
            arrays.update(opt_arrays)
    else:
        for key in ("opt_cloud_steps", "opt_motion_steps"):
            steps = getattr(model, "opt_steps_", {}).get(key)
            if steps is not None:
                meta[key] = steps
        arrays.update(getattr(model, "optimizer_state_", {}))
    return write_blob(path, MAGIC, VERSION, meta, arrays)


def load_checkpoint(path):
    """Rebuild a render-ready model from a checkpoint file."""
    from .estimator import AnimatableSplatModel

    _, meta, arrays = read_blob(path, MAGIC, VERSION)
    config = _config_from_dict(meta["config"])
    model = AnimatableSplatModel()
    model.config_ = config
    model.render_config_ = RenderConfig(**meta["render_config"])
    model.background_ = np.asarray(meta["background"], dtype=np.float64)
    model.meta_ = meta["dataset"]

    cloud_state = {
        name.split(".", 1)[1]: arr
        for name, arr in arrays.items()
        if name.startswith("cloud.")
    }
    model.cloud_ = GaussianCloud.from_state_dict(cloud_state)

    model.rig_ = None
    if meta["has_rig"]:
        rig = BoneRig(config.rig, meta["dataset"]["scene_extent"])
        rig_state = {
            "embedding": arrays["rig.embedding"],
            "base_precision": meta["rig"]["base_precision"],
        }
        for mlp in ("centers", "scales", "rotations"):
            prefix = f"rig.{mlp}."
            rig_state[mlp] = {
                name[len(prefix):]: arr
                for name, arr in arrays.items()
                if name.startswith(prefix)
            }
        rig.load_state_dict(rig_state)
        model.rig_ = rig

    model.root_quats_ = [ad.Tensor(q, requires_grad=True) for q in arrays["roots.quats"]]
    model.root_trans_ = [ad.Tensor(t, requires_grad=True) for t in arrays["roots.trans"]]
    model.optimizer_state_ = {
        name: arr for name, arr in arrays.items() if name.startswith("opt.")
    }
    model.opt_steps_ = {
        key: meta[key] for key in ("opt_cloud_steps", "opt_motion_steps") if key in meta
    }
    model.rng_state_ = meta["rng_state"]
    model.stage_ = meta["stage"]
    return model
