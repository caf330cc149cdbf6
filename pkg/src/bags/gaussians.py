"""Canonical-space Gaussian cloud: storage, activations, densification.

Parameters live as autodiff leaves in structure-of-arrays layout. Scale is
kept in log space and opacity in logit space so unconstrained optimizer
steps cannot leave the valid domain; quaternions are renormalized and
colors clamped after every step instead.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from bags import autodiff as ad
from bags import linalg
from bags.errors import DataError, NumericsError


class GaussianCloud:
    """Structure-of-arrays Gaussian set with densification accumulators."""

    PARAM_NAMES = ("positions", "quats", "log_scales", "opacity_logits", "colors")

    def __init__(self, positions, quats, log_scales, opacity_logits, colors, scene_extent: float):
        positions = np.asarray(positions, dtype=np.float64)
        n = positions.shape[0]
        if n == 0:
            raise DataError("Gaussian cloud must be non-empty")
        self.positions = ad.Tensor(positions, requires_grad=True)
        quats = np.asarray(quats, dtype=np.float64)
        norms = np.linalg.norm(quats, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            # Normalize only when needed so checkpoint reloads keep exact bits.
            quats = linalg.quat_normalize(quats)
        self.quats = ad.Tensor(quats, requires_grad=True)
        self.log_scales = ad.Tensor(np.asarray(log_scales, dtype=np.float64), requires_grad=True)
        self.opacity_logits = ad.Tensor(np.asarray(opacity_logits, dtype=np.float64), requires_grad=True)
        self.colors = ad.Tensor(np.clip(np.asarray(colors, dtype=np.float64), 0.0, 1.0), requires_grad=True)
        self.scene_extent = float(scene_extent)
        for name, want in (("positions", (n, 3)), ("quats", (n, 4)), ("log_scales", (n, 3)), ("opacity_logits", (n,)), ("colors", (n, 3))):
            got = getattr(self, name).data.shape
            if got != want:
                raise DataError(f"{name} shape {got}, expected {want}")
        self.reset_accumulators()

    # -- basic views ------------------------------------------------------

    @property
    def n(self) -> int:
        return self.positions.data.shape[0]

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales.data)

    def opacities(self) -> np.ndarray:
        from scipy.special import expit

        return expit(self.opacity_logits.data)

    def param_tensors(self) -> dict[str, ad.Tensor]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    # -- covariance -------------------------------------------------------

    def build_covariance(self) -> np.ndarray:
        """World covariances R diag(exp(2s)) R^T, shape (N,3,3)."""
        rot = linalg.quat_to_rotmat(self.quats.data)
        e2s = np.exp(2.0 * self.log_scales.data)
        # same contraction order as covariance_t so both routes agree bitwise
        return np.einsum("nij,nkj->nik", rot * e2s[:, None, :], rot)

    def covariance_t(self) -> ad.Tensor:
        """Tape version of :meth:`build_covariance` for gradient flow."""
        rot = linalg.quat_to_rotmat_t(self.quats)
        e2s = ad.exp(self.log_scales * 2.0)
        scaled = rot * ad.reshape(e2s, (self.n, 1, 3))
        return ad.einsum("nij,nkj->nik", scaled, rot)

    def opacities_t(self) -> ad.Tensor:
        return ad.sigmoid(self.opacity_logits)

    # -- invariants after optimizer steps ----------------------------------

    def renormalize(self) -> None:
        """Re-project parameters onto their valid domains in place."""
        q = self.quats.data
        self.quats.data = q / np.linalg.norm(q, axis=1, keepdims=True)
        self.colors.data = np.clip(self.colors.data, 0.0, 1.0)
        self.log_scales.data = np.minimum(self.log_scales.data, np.log(self.scene_extent))

    # -- densification ------------------------------------------------------

    def reset_accumulators(self) -> None:
        self.grad_accum = np.zeros(self.n)
        self.grad_count = np.zeros(self.n)
        self.world_grad_accum = np.zeros((self.n, 3))

    def accumulate_stats(self, view_grad_mag: np.ndarray, world_grad: np.ndarray, visible: np.ndarray) -> None:
        """Record view-space gradient magnitudes for splats visible this step."""
        self.grad_accum[visible] += view_grad_mag[visible]
        self.grad_count[visible] += 1.0
        self.world_grad_accum[visible] += world_grad[visible]

    def densify_and_prune(
        self,
        rng: np.random.Generator,
        grad_threshold: float = 2e-4,
        split_scale_fraction: float = 0.01,
        prune_opacity: float = 0.005,
    ) -> np.ndarray:
        """Clone small / split large high-gradient splats, prune faint ones.

        Returns a row map (one entry per surviving row: source row index,
        or -1 for rows sampled fresh) for optimizer-state migration.
        """
        mean_grad = self.grad_accum / np.maximum(self.grad_count, 1.0)
        hot = mean_grad > grad_threshold
        max_scale = self.scales().max(axis=1)
        big = max_scale > split_scale_fraction * self.scene_extent
        split = hot & big
        clone = hot & ~big

        pos = self.positions.data
        quat = self.quats.data
        logs = self.log_scales.data
        logit = self.opacity_logits.data
        col = self.colors.data

        new_pos = [pos[~split]]  # originals minus split parents
        new_quat = [quat[~split]]
        new_logs = [logs[~split]]
        new_logit = [logit[~split]]
        new_col = [col[~split]]
        row_map = [np.arange(self.n)[~split]]

        if clone.any():
            idx = np.nonzero(clone)[0]
            g = self.world_grad_accum[idx] / np.maximum(self.grad_count[idx, None], 1.0)
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            direction = np.where(gn > 1e-12, g / np.maximum(gn, 1e-12), 0.0)
            step = np.exp(logs[idx]).mean(axis=1, keepdims=True)
            new_pos.append(pos[idx] - step * direction)  # descend the gradient
            new_quat.append(quat[idx])
            new_logs.append(logs[idx])
            new_logit.append(logit[idx])
            new_col.append(col[idx])
            row_map.append(np.full(idx.size, -1))

        if split.any():
            idx = np.nonzero(split)[0]
            rot = linalg.quat_to_rotmat(quat[idx])
            scale = np.exp(logs[idx])
            for _ in range(2):
                local = rng.normal(size=(idx.size, 3)) * scale
                new_pos.append(pos[idx] + np.einsum("nij,nj->ni", rot, local))
                new_quat.append(quat[idx])
                new_logs.append(logs[idx] - np.log(1.6))
                new_logit.append(logit[idx])
                new_col.append(col[idx])
                row_map.append(np.full(idx.size, -1))

        pos = np.concatenate(new_pos)
        quat = np.concatenate(new_quat)
        logs = np.concatenate(new_logs)
        logit = np.concatenate(new_logit)
        col = np.concatenate(new_col)
        row_map = np.concatenate(row_map)

        from scipy.special import expit

        keep = expit(logit) >= prune_opacity
        if not keep.any():
            raise NumericsError("pruning removed every Gaussian")
        self.positions = ad.Tensor(pos[keep], requires_grad=True)
        self.quats = ad.Tensor(quat[keep], requires_grad=True)
        self.log_scales = ad.Tensor(logs[keep], requires_grad=True)
        self.opacity_logits = ad.Tensor(logit[keep], requires_grad=True)
        self.colors = ad.Tensor(col[keep], requires_grad=True)
        self.reset_accumulators()
        return row_map[keep]

    # -- construction --------------------------------------------------------

    @classmethod
    def init_from_mask(
        cls,
        image: np.ndarray,
        mask: np.ndarray,
        camera,
        count: int,
        rng: np.random.Generator,
        scene_extent: float | None = None,
        depth_spread: float = 0.15,
    ) -> "GaussianCloud":
        """Back-project ``count`` random mask pixels to seed the cloud.

        Depths are drawn around the camera-to-origin distance, which is the
        working assumption for object-centric captures; scales come from
        nearest-neighbor spacing so initial splats roughly tile the volume.
        """
        mask = np.asarray(mask) > 0.5
        ys, xs = np.nonzero(mask)
        if ys.size == 0:
            raise DataError("cannot initialize from an empty mask")
        if count < 1:
            raise DataError("count must be >= 1")
        pick = rng.integers(0, ys.size, size=count)
        px = xs[pick] + 0.5
        py = ys[pick] + 0.5

        d0 = float(np.linalg.norm(camera.center))
        if d0 < 1e-6:
            d0 = 1.0
        depth = d0 * rng.uniform(1.0 - depth_spread, 1.0 + depth_spread, size=count)
        x_cam = (px - camera.cx) / camera.fx * depth
        y_cam = (py - camera.cy) / camera.fy * depth
        cam_pts = np.stack([x_cam, y_cam, depth], axis=1)
        world = (cam_pts - camera.translation) @ camera.rotation

        tree = cKDTree(world)
        dist, _ = tree.query(world, k=min(4, count))
        if count == 1:
            nn = np.array([0.1 * d0])
        else:
            nn = dist[:, 1:].mean(axis=1)
        nn = np.maximum(nn, 1e-4 * d0)
        log_scales = np.log(nn)[:, None].repeat(3, axis=1)

        colors = np.asarray(image, dtype=np.float64)[ys[pick], xs[pick]]
        quats = np.zeros((count, 4))
        quats[:, 0] = 1.0
        logit = np.full(count, np.log(0.1 / 0.9))
        if scene_extent is None:
            scene_extent = 2.0 * d0
        return cls(world, quats, log_scales, logit, colors, scene_extent)

    # -- serialization ------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: getattr(self, name).data.copy() for name in self.PARAM_NAMES}
        out["scene_extent"] = np.array(self.scene_extent)
        return out

    @classmethod
    def from_state_dict(cls, state) -> "GaussianCloud":
        return cls(
            state["positions"],
            state["quats"],
            state["log_scales"],
            state["opacity_logits"],
            state["colors"],
            # container round-trips the scalar as a 1-element array
            float(np.asarray(state["scene_extent"]).item()),
        )
