"""Neural bone rig: time-conditioned bone poses, Mahalanobis skinning, and
the blended point warp with its analytic spatial Jacobian.

Bones are free rigid ellipsoids, not a kinematic tree. Three small MLPs map
a sinusoidal time embedding to per-bone centers, diagonal precisions, and
rotations; the canonical pose comes from a learnable embedding fed through
the same networks, so canonical and posed space stay coupled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import bags.autodiff as ad
from bags import linalg
from bags.errors import ConfigError, DataError, NumericsError
from bags.nn import Mlp


def time_embedding(t: float, n_freqs: int) -> np.ndarray:
    """Interleaved (sin(2^k pi t), cos(2^k pi t)) for k < n_freqs; t in [0,1]."""
    if n_freqs < 1:
        raise ConfigError(f"need at least one embedding frequency, got {n_freqs}")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DataError(f"time must be normalized to [0, 1], got {t}")
    phase = (2.0 ** np.arange(n_freqs)) * np.pi * t
    out = np.empty(2 * n_freqs)
    out[0::2] = np.sin(phase)
    out[1::2] = np.cos(phase)
    return out


def farthest_point_sample(points: np.ndarray, count: int) -> np.ndarray:
    """Greedy coverage anchors; deterministic (seeded by the centroid)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0 or count < 1:
        raise DataError("farthest point sampling needs points and count >= 1")
    centroid = points.mean(axis=0)
    chosen = [int(np.argmax(np.linalg.norm(points - centroid, axis=1)))]
    dist = np.linalg.norm(points - points[chosen[0]], axis=1)
    while len(chosen) < min(count, n):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    idx = np.array([chosen[i % len(chosen)] for i in range(count)])
    return points[idx].copy()


@dataclass(frozen=True)
class BoneRigConfig:
    bones: int = 16
    freqs: int = 6
    hidden: int = 128
    layers: int = 4

    def __post_init__(self):
        if self.bones < 1:
            raise ConfigError(f"bone count must be >= 1, got {self.bones}")
        if self.freqs < 1:
            raise ConfigError(f"embedding frequency count must be >= 1, got {self.freqs}")
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("MLP width and depth must be >= 1")


@dataclass
class BonePose:
    """Per-bone ellipsoid frame: center, diagonal precision, rotation."""

    centers: ad.Tensor  # (B,3)
    scales: ad.Tensor  # (B,3) positive precision diagonal
    rotations: ad.Tensor  # (B,3,3) orthonormal

    @property
    def bones(self) -> int:
        return self.centers.data.shape[0]

    def validate(self) -> None:
        c, s, r = self.centers.data, self.scales.data, self.rotations.data
        if not (np.isfinite(c).all() and np.isfinite(s).all() and np.isfinite(r).all()):
            raise NumericsError("bone pose contains non-finite values")
        if np.any(s <= 0.0):
            raise NumericsError("bone precisions must be positive")
        gram = np.einsum("bij,bkj->bik", r, r)
        if np.abs(gram - np.eye(3)).max() > 1e-8:
            raise NumericsError("bone rotations drifted off the orthonormal manifold")

    @classmethod
    def from_arrays(cls, centers, scales, rotations) -> "BonePose":
        pose = cls(
            ad.Tensor(np.asarray(centers, dtype=np.float64)),
            ad.Tensor(np.asarray(scales, dtype=np.float64)),
            ad.Tensor(np.asarray(rotations, dtype=np.float64)),
        )
        pose.validate()
        return pose


@dataclass
class BoneDeltas:
    """Rigid canonical-to-target transform per bone."""

    linear: ad.Tensor  # (B,3,3)
    translation: ad.Tensor  # (B,3)

    @property
    def bones(self) -> int:
        return self.linear.data.shape[0]


@dataclass
class WarpResult:
    weights: ad.Tensor  # (N,B) simplex rows
    a_linear: ad.Tensor  # (N,3,3) blended linear part
    a_translation: ad.Tensor  # (N,3)
    jacobian: ad.Tensor  # (N,3,3) spatial Jacobian of the warp map
    means: ad.Tensor  # (N,3)
    covariances: ad.Tensor  # (N,3,3)


class BoneRig:
    """MLP-predicted bone poses plus the learnable canonical embedding."""

    def __init__(self, config: BoneRigConfig, scene_extent: float, init_positions=None, rng=None):
        if scene_extent <= 0.0:
            raise ConfigError(f"scene extent must be positive, got {scene_extent}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = config
        self.scene_extent = float(scene_extent)
        in_dim = 2 * config.freqs
        b = config.bones
        self.mlp_centers = Mlp(in_dim, config.hidden, 3 * b, config.layers, rng=rng)
        self.mlp_scales = Mlp(in_dim, config.hidden, 3 * b, config.layers, rng=rng)
        self.mlp_rotations = Mlp(in_dim, config.hidden, 4 * b, config.layers, rng=rng)
        # Near-zero final weights mean a fresh rig predicts its biases: seed
        # them so bones start as identity-rotation ellipsoids spread over the
        # cloud with coverage-scale precision.
        if init_positions is not None:
            anchors = farthest_point_sample(init_positions, b)
        else:
            anchors = rng.normal(0.0, 0.1 * self.scene_extent, (b, 3))
        self.mlp_centers.biases[-1].data[:] = anchors.reshape(-1)
        self.mlp_rotations.biases[-1].data[:] = np.tile([1.0, 0.0, 0.0, 0.0], b)
        self.base_precision = (self.scene_extent / b) ** -2
        self.canonical_embedding = ad.Tensor(
            time_embedding(0.5, config.freqs), requires_grad=True
        )

    # -- pose prediction ---------------------------------------------------

    def pose_from_embedding(self, emb: ad.Tensor) -> BonePose:
        b = self.config.bones
        centers = ad.reshape(self.mlp_centers(emb), (b, 3))
        scales = ad.exp(ad.reshape(self.mlp_scales(emb), (b, 3))) * self.base_precision
        quats = ad.reshape(self.mlp_rotations(emb), (b, 4))
        pose = BonePose(centers, scales, linalg.quat_to_rotmat_t(quats))
        pose.validate()
        return pose

    def predict_bone_pose(self, t: float) -> BonePose:
        emb = ad.Tensor(time_embedding(t, self.config.freqs))
        return self.pose_from_embedding(emb)

    def canonical_pose(self) -> BonePose:
        return self.pose_from_embedding(self.canonical_embedding)

    # -- parameters and state ------------------------------------------------

    def parameters(self) -> list[ad.Tensor]:
        return (
            self.mlp_centers.parameters()
            + self.mlp_scales.parameters()
            + self.mlp_rotations.parameters()
            + [self.canonical_embedding]
        )

    def state_dict(self) -> dict:
        return {
            "centers": self.mlp_centers.state_dict(),
            "scales": self.mlp_scales.state_dict(),
            "rotations": self.mlp_rotations.state_dict(),
            "embedding": self.canonical_embedding.data.copy(),
            "base_precision": self.base_precision,
        }

    def load_state_dict(self, state: dict) -> None:
        self.mlp_centers.load_state_dict(state["centers"])
        self.mlp_scales.load_state_dict(state["scales"])
        self.mlp_rotations.load_state_dict(state["rotations"])
        emb = np.asarray(state["embedding"], dtype=np.float64)
        if emb.shape != self.canonical_embedding.data.shape:
            raise DataError("canonical embedding shape mismatch")
        self.canonical_embedding.data = emb.copy()
        self.base_precision = float(state["base_precision"])


# -- skinning and warping ----------------------------------------------------


def _tensor(x) -> ad.Tensor:
    return x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=np.float64))


def skinning_weights(x, pose: BonePose) -> ad.Tensor:
    """Softmax over negated Mahalanobis distances to each bone ellipsoid.

    Nearer bones get larger weight; rows live on the simplex.
    """
    x = _tensor(x)
    n = x.data.shape[0]
    b = pose.bones
    diff = ad.reshape(x, (n, 1, 3)) - ad.reshape(pose.centers, (1, b, 3))
    local = ad.einsum("bij,nbj->nbi", pose.rotations, diff)
    dist = ad.tsum(local * local * ad.reshape(pose.scales, (1, b, 3)), axis=2)
    return ad.softmax(-dist, axis=1)


def bone_delta_transforms(canonical: BonePose, target: BonePose) -> BoneDeltas:
    """Rigid motion taking each canonical bone frame to its target frame."""
    if canonical.bones != target.bones:
        raise DataError(
            f"bone count mismatch: canonical {canonical.bones}, target {target.bones}"
        )
    lin = ad.einsum("bij,bkj->bik", target.rotations, canonical.rotations)
    trans = target.centers - ad.einsum("bij,bj->bi", lin, canonical.centers)
    return BoneDeltas(lin, trans)


def identity_deltas(bones: int) -> BoneDeltas:
    return BoneDeltas(
        ad.Tensor(np.broadcast_to(np.eye(3), (bones, 3, 3)).copy()),
        ad.Tensor(np.zeros((bones, 3))),
    )


def warp_gaussians(positions, covariances, deltas: BoneDeltas, weight_pose: BonePose) -> WarpResult:
    """Blend per-bone rigid motions over the cloud.

    Weights are evaluated at the canonical means against the canonical pose;
    the target pose enters only through ``deltas``. The Jacobian is the
    analytic spatial derivative of x -> sum_b w^b(x) (L_b x + t_b), so the
    warped covariance follows it to first order.
    """
    positions = _tensor(positions)
    covariances = _tensor(covariances)
    n = positions.data.shape[0]
    b = deltas.bones
    if weight_pose.bones != b:
        raise DataError("weight pose and deltas disagree on bone count")

    omega = skinning_weights(positions, weight_pose)  # (N,B)
    moved = ad.einsum("bij,nj->nbi", deltas.linear, positions) + ad.reshape(
        deltas.translation, (1, b, 3)
    )
    # Displacement form: identity deltas give exactly zero displacement, so
    # the identity warp is bit-exact regardless of softmax round-off.
    disp = moved - ad.reshape(positions, (n, 1, 3))
    means = positions + ad.einsum("nb,nbi->ni", omega, disp)

    # d w^b/dx = -w^b (g_b - sum_c w^c g_c), g_b = 2 M^T D M (x - C_b)
    diff = ad.reshape(positions, (n, 1, 3)) - ad.reshape(weight_pose.centers, (1, b, 3))
    scaled = weight_pose.rotations * ad.reshape(weight_pose.scales, (b, 3, 1))
    quad = ad.einsum("bki,bkj->bij", weight_pose.rotations, scaled)
    gdist = ad.einsum("bij,nbj->nbi", quad, diff) * 2.0
    gmean = ad.einsum("nb,nbi->ni", omega, gdist)
    gomega = (ad.reshape(omega, (n, b, 1)) * (gdist - ad.reshape(gmean, (n, 1, 3)))) * -1.0

    a_lin = ad.einsum("nb,bij->nij", omega, deltas.linear)
    a_trans = ad.einsum("nb,bi->ni", omega, deltas.translation)
    # Softmax rows sum to one only in exact arithmetic; fold the residual
    # back onto the diagonal so identity and single-bone warps stay exact.
    resid = 1.0 - ad.tsum(omega, axis=1)
    eye = ad.Tensor(np.eye(3))
    jac = (
        a_lin
        + ad.reshape(resid, (n, 1, 1)) * eye
        + ad.einsum("nbi,nbj->nij", disp, gomega)
    )
    if not np.isfinite(jac.data).all():
        raise NumericsError("warp Jacobian contains non-finite values")

    inner = ad.einsum("nij,njk->nik", jac, covariances)
    cov = ad.einsum("nik,njk->nij", inner, jac)
    return WarpResult(omega, a_lin, a_trans, jac, means, cov)


def pose_deltas(canonical: BonePose, quats: np.ndarray, translations: np.ndarray) -> BoneDeltas:
    """Rigid deltas from user pose overrides, pivoting at bone centers.

    Bone b maps x -> R_b (x - c_b) + c_b + t_b, so a pure rotation spins
    the bone in place instead of swinging it around the world origin.
    """
    quats = np.asarray(quats, dtype=np.float64)
    translations = np.asarray(translations, dtype=np.float64)
    b = canonical.bones
    if quats.shape != (b, 4):
        raise DataError(f"expected {b} bone quaternions, got shape {quats.shape}")
    if translations.shape != (b, 3):
        raise DataError(f"expected {b} bone translations, got shape {translations.shape}")
    rot = linalg.quat_to_rotmat(linalg.quat_normalize(quats))
    centers = canonical.centers.data
    trans = centers + translations - np.einsum("bij,bj->bi", rot, centers)
    return BoneDeltas(ad.Tensor(rot), ad.Tensor(trans))


def apply_root_transform(result: WarpResult, rotation: ad.Tensor, translation: ad.Tensor) -> WarpResult:
    """Compose a global rigid motion after the bone warp."""
    means = ad.einsum("ij,nj->ni", rotation, result.means) + ad.reshape(translation, (1, 3))
    jac = ad.einsum("ij,njk->nik", rotation, result.jacobian)
    inner = ad.einsum("ij,njk->nik", rotation, result.covariances)
    cov = ad.einsum("nik,jk->nij", inner, rotation)
    a_lin = ad.einsum("ij,njk->nik", rotation, result.a_linear)
    a_trans = ad.einsum("ij,nj->ni", rotation, result.a_translation) + ad.reshape(
        translation, (1, 3)
    )
    return WarpResult(result.weights, a_lin, a_trans, jac, means, cov)
