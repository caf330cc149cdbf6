"""Command-line entry point: train, render, animate, export, eval, bench.

Configuration layers as defaults < TOML file < flags, with unknown keys
rejected so a typo in an experiment config fails loudly instead of
silently training with defaults. Exit codes: 0 success, 2 configuration,
3 input/output, 4 numerical divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .cameras import Camera
from .errors import BagsError, ConfigError, DataError, FormatError, NumericsError
from .estimator import AnimatableSplatModel
from .linalg import quat_slerp
from .losses import LossWeights
from .priors import RemoteProvider, ZeroProvider
from .renderer import set_threads

log = logging.getLogger("bags")

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICS = 4


# -- helpers -------------------------------------------------------------------


def _write_png(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = (np.clip(array, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(data).save(path)


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        width, height = int(w), int(h)
    except ValueError as exc:
        raise ConfigError(f"resolution must look like 640x480, got {text!r}") from exc
    if width < 1 or height < 1:
        raise ConfigError("resolution must be positive")
    return width, height


def _config_file_params(path) -> dict:
    allowed = set(AnimatableSplatModel._param_names()) - {"render_config", "log_path"}
    allowed |= {"threads"}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file is not valid TOML: {exc}") from exc
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "weights" in data:
        try:
            data["weights"] = LossWeights(**data["weights"])
        except TypeError as exc:
            raise ConfigError(f"bad weights table: {exc}") from exc
    for key in ("warmup_tau", "joint_tau", "sds_azimuth", "sds_elevation", "sds_radius"):
        if key in data:
            data[key] = tuple(data[key])
    return data


def _resolve_prior(spec: str, dataset=None):
    if spec == "zero":
        return ZeroProvider()
    if spec == "oracle":
        if dataset is None or dataset.synthetic is None:
            raise ConfigError(
                "--prior oracle needs a manifest with an embedded synthetic block"
            )
        from .synthetic import ArmOracleProvider, scene_from_params

        return ArmOracleProvider(scene_from_params(dataset.synthetic))
    if spec.startswith("remote:"):
        return RemoteProvider(spec[len("remote:"):])
    raise ConfigError(f"unknown prior {spec!r}; use zero, oracle, or remote:URL")


def _load_model(args) -> AnimatableSplatModel:
    if not args.checkpoint:
        raise ConfigError("this command needs --checkpoint")
    return AnimatableSplatModel.load(args.checkpoint)


def _default_camera(model, width: int, height: int, azimuth: float = 0.0) -> Camera:
    extent = float(model.meta_["scene_extent"])
    return Camera.orbit(
        target=(0.0, 0.0, 0.0),
        radius=2.0 * extent,
        azimuth_deg=azimuth,
        elevation_deg=12.0,
        fov_deg=45.0,
        width=width,
        height=height,
    )


def _camera_from_args(args, model) -> Camera:
    if args.resolution:
        width, height = _parse_resolution(args.resolution)
    else:
        width, height = model.meta_["width"], model.meta_["height"]
    if getattr(args, "camera", None):
        try:
            spec = json.loads(Path(args.camera).read_text())
        except FileNotFoundError as exc:
            raise DataError(f"camera file not found: {args.camera}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"camera file is not valid JSON: {exc}") from exc
        return Camera.from_spec(spec, width, height)
    return _default_camera(model, width, height)


# -- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    from .datasets import load_dataset

    if not args.manifest:
        raise ConfigError("train needs --manifest")
    params = _config_file_params(args.config) if args.config else {}
    prior_spec = params.pop("prior", "zero")
    threads = params.pop("threads", None)
    if args.threads is not None:
        threads = args.threads
    if threads is not None:
        set_threads(int(threads))
    if args.seed is not None:
        params["seed"] = args.seed
    if args.prior:
        prior_spec = args.prior

    dataset = load_dataset(args.manifest)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    model = AnimatableSplatModel(
        prior=_resolve_prior(prior_spec, dataset),
        log_path=out / "metrics.jsonl",
        **params,
    )
    model.fit(dataset)
    ckpt = out / "model.ckpt"
    model.save(ckpt)
    summary = {
        "checkpoint": str(ckpt),
        "metrics": {k: v for k, v in model.metrics_.items() if k != "per_frame"},
        "splats": int(model.cloud_.n),
    }
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_render(args) -> int:
    model = _load_model(args)
    if args.threads is not None:
        set_threads(args.threads)
    out = Path(args.out or "render.png")
    if args.orbit:
        if args.resolution:
            width, height = _parse_resolution(args.resolution)
        else:
            width, height = model.meta_["width"], model.meta_["height"]
        out.mkdir(parents=True, exist_ok=True)
        for i in range(args.orbit):
            cam = _default_camera(model, width, height, azimuth=360.0 * i / args.orbit)
            result = model.render(args.time, cam)
            _write_png(out / f"orbit_{i:03d}.png", result.image)
        print(json.dumps({"frames": args.orbit, "out": str(out)}))
        return EXIT_OK
    camera = _camera_from_args(args, model)
    result = model.render(args.time, camera)
    _write_png(out, result.image)
    print(json.dumps({"out": str(out)}))
    return EXIT_OK


def _load_pose_file(path, bones: int):
    """Parse a pose file into (times, quats (K,B,4), translations (K,B,3))."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"pose file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"pose file is not valid JSON: {exc}") from exc
    keyframes = data.get("keyframes")
    if not keyframes:
        raise DataError("pose file has no keyframes")
    times = []
    quats = []
    trans = []
    for k, frame in enumerate(keyframes):
        bone_list = frame.get("bones")
        if bone_list is None:
            raise DataError(f"keyframe {k} is missing 'bones'")
        if len(bone_list) != bones:
            raise DataError(
                f"keyframe {k} has {len(bone_list)} bones, model has {bones}"
            )
        times.append(float(frame.get("time", k / max(len(keyframes) - 1, 1))))
        quats.append([b.get("rotation", [1.0, 0.0, 0.0, 0.0]) for b in bone_list])
        trans.append([b.get("translation", [0.0, 0.0, 0.0]) for b in bone_list])
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DataError("keyframe times must be strictly increasing")
    samples = int(data.get("samples", len(keyframes)))
    if samples < 1:
        raise DataError("samples must be >= 1")
    return (
        np.asarray(times),
        np.asarray(quats, dtype=np.float64),
        np.asarray(trans, dtype=np.float64),
        samples,
    )


def _interpolate_pose(times, quats, trans, t: float):
    """Slerp rotations / lerp translations between the bracketing keyframes."""
    if t <= times[0]:
        return quats[0], trans[0]
    if t >= times[-1]:
        return quats[-1], trans[-1]
    hi = int(np.searchsorted(times, t, side="right"))
    lo = hi - 1
    u = (t - times[lo]) / (times[hi] - times[lo])
    q = np.stack([quat_slerp(a, b, u) for a, b in zip(quats[lo], quats[hi])])
    return q, (1.0 - u) * trans[lo] + u * trans[hi]


def cmd_animate(args) -> int:
    model = _load_model(args)
    if model.rig_ is None:
        raise ConfigError("checkpoint has no rig; train with joint iterations first")
    if not args.poses:
        raise ConfigError("animate needs --poses")
    if args.threads is not None:
        set_threads(args.threads)
    bones = model.rig_.config.bones
    times, quats, trans, samples = _load_pose_file(args.poses, bones)
    camera = _camera_from_args(args, model)
    out = Path(args.out or "anim")
    out.mkdir(parents=True, exist_ok=True)
    span = (times[0], times[-1])
    for i in range(samples):
        t = span[0] if samples == 1 else span[0] + (span[1] - span[0]) * i / (samples - 1)
        q, d = _interpolate_pose(times, quats, trans, t)
        result = model.render_posed(q, d, camera)
        _write_png(out / f"anim_{i:03d}.png", result.image)
    print(json.dumps({"frames": samples, "out": str(out)}))
    return EXIT_OK


def cmd_export(args) -> int:
    model = _load_model(args)
    out = Path(args.out or "model.bundle")
    model.export_bundle(out)
    print(json.dumps({"out": str(out), "sidecar": str(out) + ".json"}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .datasets import load_dataset

    model = _load_model(args)
    if not args.manifest:
        raise ConfigError("eval needs --manifest")
    if args.threads is not None:
        set_threads(args.threads)
    dataset = load_dataset(args.manifest)
    metrics = model.evaluate(dataset)
    text = json.dumps(metrics, indent=1)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _bench_cloud(splats: int, seed: int = 0):
    """Procedural cloud for benchmarking when no checkpoint is given."""
    from .gaussians import GaussianCloud

    rng = np.random.default_rng(seed)
    positions = rng.uniform(-0.8, 0.8, size=(splats, 3))
    quats = rng.normal(size=(splats, 4))
    log_scales = rng.uniform(np.log(0.01), np.log(0.05), size=(splats, 3))
    logits = rng.uniform(-1.0, 2.0, size=splats)
    colors = rng.uniform(0.0, 1.0, size=(splats, 3))
    return GaussianCloud(positions, quats, log_scales, logits, colors, 2.0)


def cmd_bench(args) -> int:
    from .renderer import render_forward

    if args.iterations < 1:
        raise ConfigError("bench needs at least one iteration")
    threads = set_threads(args.threads if args.threads is not None else os.cpu_count() or 1)
    width, height = _parse_resolution(args.resolution or "256x256")
    if args.checkpoint:
        model = _load_model(args)
        cloud = model.cloud_
        background = model.background_
    else:
        cloud = _bench_cloud(args.splats)
        background = np.zeros(3)
    covs = cloud.build_covariance()
    opac = cloud.opacities()
    # One warm render compiles the kernels outside the timed region.
    cam0 = Camera.orbit((0, 0, 0), 2.0 * cloud.scene_extent, 0.0, 15.0, 45.0, width, height)
    render_forward(cloud.positions.data, covs, opac, cloud.colors.data, cam0, background)
    samples = []
    for i in range(args.iterations):
        cam = Camera.orbit(
            (0, 0, 0),
            2.0 * cloud.scene_extent,
            360.0 * i / args.iterations,
            15.0,
            45.0,
            width,
            height,
        )
        start = time.perf_counter()
        render_forward(cloud.positions.data, covs, opac, cloud.colors.data, cam, background)
        samples.append(time.perf_counter() - start)
    report = {
        "splats": int(cloud.n),
        "resolution": f"{width}x{height}",
        "threads": threads,
        "iterations": args.iterations,
        "fps_mean": 1.0 / statistics.fmean(samples),
        "fps_median": 1.0 / statistics.median(samples),
        "ms_mean": 1e3 * statistics.fmean(samples),
    }
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bags",
        description="Animatable Gaussian-splat models from masked image sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", help="dataset manifest JSON")
        p.add_argument("--checkpoint", help="model checkpoint path")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--threads", type=int, help="renderer thread count")
        p.add_argument("--prior", help="prior provider: zero | oracle | remote:URL")
        p.add_argument("--resolution", help="output resolution WxH")
        p.add_argument("--orbit", type=int, help="render N views on an azimuth circle")

    p = sub.add_parser("train", help="fit a model from a manifest")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a checkpoint at a time and camera")
    common(p)
    p.add_argument("--time", type=float, default=0.5, help="normalized time in [0, 1]")
    p.add_argument("--camera", help="camera spec JSON file")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("animate", help="render a user-posed sequence")
    common(p)
    p.add_argument("--poses", help="pose keyframe JSON file")
    p.add_argument("--camera", help="camera spec JSON file")
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("export", help="write the viewer bundle")
    common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure forward-render throughput")
    common(p)
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--splats", type=int, default=10_000, help="synthetic cloud size")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("BAGS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except BagsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
