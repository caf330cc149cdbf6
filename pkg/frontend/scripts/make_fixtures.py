"""Regenerate the viewer test fixtures from the Python reference code.

Run from the repository root:

    python3 frontend/scripts/make_fixtures.py

Outputs into frontend/tests/fixtures/:

    arm.bundle[.json]   small trained model (3 bones) for parse/LBS tests
    big.bundle[.json]   10k-splat synthetic bundle for throughput tests
    lbs_oracle.json     a random pose plus float64-recomputed warped means
                        and blended linear parts for that bundle
    truncated.bundle    arm.bundle missing its tail, must fail to parse
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[2]
FIXTURES = ROOT / "frontend" / "tests" / "fixtures"


def small_fitted_bundle():
    from bags.datasets import dataset_from_scene
    from bags.estimator import AnimatableSplatModel
    from bags.priors import ZeroProvider
    from bags.synthetic import make_arm_scene

    scene = make_arm_scene(splats=240, frames=5, size=40, seed=17)
    model = AnimatableSplatModel(
        warmup_iterations=6,
        joint_iterations=6,
        init_splats=120,
        bones=3,
        rig_freqs=2,
        rig_hidden=16,
        rig_layers=2,
        densify_start=10_000,
        eval_interval=10_000,
        prior=ZeroProvider(),
        seed=11,
    )
    model.fit(dataset_from_scene(scene))
    model.export_bundle(FIXTURES / "arm.bundle")
    return model


def big_synthetic_bundle():
    from bags.gaussians import GaussianCloud
    from bags.rig import BoneRig, BoneRigConfig
    from bags.viewer_bundle import export_bundle

    rng = np.random.default_rng(5)
    n = 10_000
    positions = rng.uniform(-1.0, 1.0, (n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    cloud = GaussianCloud(
        positions,
        quats,
        np.log(rng.uniform(0.01, 0.05, (n, 3))),
        rng.normal(0.0, 1.0, n),
        rng.uniform(0.0, 1.0, (n, 3)),
        scene_extent=1.0,
    )
    rig = BoneRig(
        BoneRigConfig(bones=4, freqs=3, hidden=24, layers=2),
        scene_extent=1.0,
        init_positions=positions,
        rng=np.random.default_rng(6),
    )
    export_bundle(cloud, rig, FIXTURES / "big.bundle")


def lbs_oracle(model):
    """Recompute the documented client warp in float64 as the oracle.

    Means additionally get a second, fully independent value from the
    library warp (live softmax weights); the two agree to ~1e-7, well
    inside the 1e-5 gate the client test applies.
    """
    from bags.rig import pose_deltas, warp_gaussians
    from bags.viewer_bundle import parse_bundle

    bundle = parse_bundle(FIXTURES / "arm.bundle")
    n, b = bundle["splats"], bundle["bones"]
    rng = np.random.default_rng(99)
    axis = rng.normal(size=(b, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    half = np.radians(rng.uniform(-40.0, 40.0, size=b)) / 2.0
    quats = np.concatenate([np.cos(half)[:, None], np.sin(half)[:, None] * axis], axis=1)
    translations = rng.uniform(-0.2, 0.2, size=(b, 3))

    canonical = model.rig_.canonical_pose()
    deltas = pose_deltas(canonical, quats, translations)
    lin = deltas.linear.data  # (B,3,3)
    dt = deltas.translation.data  # (B,3)

    # Documented client formula with the bundle's own baked weights.
    x = bundle["positions"].astype(np.float64)
    w = bundle["weights"].astype(np.float64)
    moved = np.einsum("bij,nj->nbi", lin, x) + dt[None]
    disp = moved - x[:, None, :]
    means = x + np.einsum("nb,nbi->ni", w, disp)
    a_lin = np.eye(3)[None] + np.einsum("nb,bij->nij", w, lin - np.eye(3)[None])

    # Independent route: the library warp with live float64 weights.
    live = warp_gaussians(
        model.cloud_.positions, model.cloud_.covariance_t(), deltas, canonical
    )
    drift = float(np.abs(live.means.data - means).max())
    assert drift < 1e-5, f"oracle routes disagree by {drift}"

    doc = {
        "pose": [
            {"rotation": quats[k].tolist(), "translation": translations[k].tolist()}
            for k in range(b)
        ],
        "means": means.tolist(),
        "linear": a_lin.reshape(n, 9).tolist(),
        "library_means_max_drift": drift,
    }
    (FIXTURES / "lbs_oracle.json").write_text(json.dumps(doc))


def truncated():
    raw = (FIXTURES / "arm.bundle").read_bytes()
    (FIXTURES / "truncated.bundle").write_bytes(raw[: len(raw) - 64])


def main() -> int:
    sys.path.insert(0, str(ROOT / "src"))
    FIXTURES.mkdir(parents=True, exist_ok=True)
    model = small_fitted_bundle()
    big_synthetic_bundle()
    lbs_oracle(model)
    truncated()
    names = sorted(p.name for p in FIXTURES.iterdir())
    print(f"wrote {len(names)} fixtures: {', '.join(names)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
