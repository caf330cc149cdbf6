"""EWA splat projection: world Gaussians to screen-space conics.

Forward maps each 3D Gaussian to a 2D mean, covariance, and conic via the
pinhole Jacobian; backward is the hand-derived adjoint of that chain (the
rasterizer deliberately stays off the autodiff tape).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ProjectedSplats:
    """Valid splats only, globally sorted by (depth, source index)."""

    index: np.ndarray  # (M,) source row in the input arrays
    mean2d: np.ndarray  # (M,2) pixels
    cov2d: np.ndarray  # (M,3) packed (xx, xy, yy), low-pass floor applied
    conic: np.ndarray  # (M,3) packed inverse covariance
    depth: np.ndarray  # (M,) camera-space z
    radius: np.ndarray  # (M,) bounding radius in pixels (sigma_cut sigmas)
    # retained for the backward pass
    cam_xyz: np.ndarray  # (M,3)
    t_mat: np.ndarray  # (M,2,3) J_proj @ R

    @property
    def count(self) -> int:
        return self.index.shape[0]


def project_gaussians(
    means3d: np.ndarray,
    cov3d: np.ndarray,
    camera,
    near_plane: float = 0.01,
    sigma_cut: float = 3.0,
    lowpass: float = 0.3,
) -> ProjectedSplats:
    """Project world-space Gaussians, culling those behind or off-screen."""
    means3d = np.asarray(means3d, dtype=np.float64)
    cov3d = np.asarray(cov3d, dtype=np.float64)
    n = means3d.shape[0]
    rot = camera.rotation
    cam = means3d @ rot.T + camera.translation
    z = cam[:, 2]
    in_front = z > near_plane
    safe_z = np.where(in_front, z, 1.0)

    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    mean2d = np.stack([u, v], axis=1)

    # J_proj rows: d(u,v)/d(cam xyz) at the mean.
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / safe_z
    jac[:, 0, 2] = -camera.fx * cam[:, 0] / safe_z**2
    jac[:, 1, 1] = camera.fy / safe_z
    jac[:, 1, 2] = -camera.fy * cam[:, 1] / safe_z**2
    t_mat = jac @ rot  # (N,2,3)

    cov2d_full = np.einsum("nij,njk,nlk->nil", t_mat, cov3d, t_mat)
    cov2d_full[:, 0, 0] += lowpass
    cov2d_full[:, 1, 1] += lowpass

    cxx = cov2d_full[:, 0, 0]
    cxy = cov2d_full[:, 0, 1]
    cyy = cov2d_full[:, 1, 1]
    det = cxx * cyy - cxy * cxy
    # Floor keeps eigenvalues >= lowpass, so det > 0 always holds here.
    inv_det = 1.0 / det
    conic = np.stack([cyy * inv_det, -cxy * inv_det, cxx * inv_det], axis=1)

    mid = 0.5 * (cxx + cyy)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(sigma_cut * np.sqrt(lam_max))

    on_screen = (
        (mean2d[:, 0] + radius > 0)
        & (mean2d[:, 0] - radius < camera.width)
        & (mean2d[:, 1] + radius > 0)
        & (mean2d[:, 1] - radius < camera.height)
    )
    valid = in_front & on_screen
    idx = np.nonzero(valid)[0]
    order = np.argsort(z[idx], kind="stable")  # ties keep index order
    idx = idx[order]

    return ProjectedSplats(
        index=idx,
        mean2d=mean2d[idx],
        cov2d=np.stack([cxx, cxy, cyy], axis=1)[idx],
        conic=conic[idx],
        depth=z[idx],
        radius=radius[idx],
        cam_xyz=cam[idx],
        t_mat=t_mat[idx],
    )


def project_backward(
    splats: ProjectedSplats,
    camera,
    cov3d: np.ndarray,
    d_mean2d: np.ndarray,
    d_conic: np.ndarray,
    n_total: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of :func:`project_gaussians`.

    Args:
        splats: forward output (valid splats).
        cov3d: (N,3,3) world covariances the forward consumed.
        d_mean2d: (M,2) gradient at the projected means.
        d_conic: (M,3) gradient at the packed conics, where the xy slot
            holds the combined off-diagonal sensitivity.
        n_total: N, to size the scattered outputs.

    Returns:
        (N,3) mean gradients and (N,3,3) covariance gradients, zero rows
        for culled splats.
    """
    m = splats.count
    rot = camera.rotation
    x, y, z = splats.cam_xyz[:, 0], splats.cam_xyz[:, 1], splats.cam_xyz[:, 2]

    # conic = inv(cov2d): dCov = -Q G Q with G the full-matrix conic grad.
    q = np.empty((m, 2, 2))
    q[:, 0, 0] = splats.conic[:, 0]
    q[:, 0, 1] = q[:, 1, 0] = splats.conic[:, 1]
    q[:, 1, 1] = splats.conic[:, 2]
    g_conic = np.empty((m, 2, 2))
    g_conic[:, 0, 0] = d_conic[:, 0]
    g_conic[:, 0, 1] = g_conic[:, 1, 0] = 0.5 * d_conic[:, 1]
    g_conic[:, 1, 1] = d_conic[:, 2]
    g_cov2d = -np.einsum("nij,njk,nkl->nil", q, g_conic, q)
    # The low-pass floor is additive, so g_cov2d passes through unchanged.

    # cov2d = T cov3d T^T.
    t_mat = splats.t_mat
    sigma = cov3d[splats.index]
    d_cov3d_m = np.einsum("nji,njk,nkl->nil", t_mat, g_cov2d, t_mat)
    d_t = 2.0 * np.einsum("nij,njk,nkl->nil", g_cov2d, t_mat, sigma)

    # T = J_proj R: recover the Jacobian gradient, then its xyz dependence.
    d_jac = np.einsum("nij,kj->nik", d_t, rot)
    fx, fy = camera.fx, camera.fy
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    d_x = d_jac[:, 0, 2] * (-fx * inv_z2)
    d_y = d_jac[:, 1, 2] * (-fy * inv_z2)
    d_z = (
        d_jac[:, 0, 0] * (-fx * inv_z2)
        + d_jac[:, 1, 1] * (-fy * inv_z2)
        + d_jac[:, 0, 2] * (2.0 * fx * x * inv_z2 * inv_z)
        + d_jac[:, 1, 2] * (2.0 * fy * y * inv_z2 * inv_z)
    )

    # mean2d = (fx x/z + cx, fy y/z + cy).
    d_x += d_mean2d[:, 0] * fx * inv_z
    d_y += d_mean2d[:, 1] * fy * inv_z
    d_z += -(d_mean2d[:, 0] * fx * x + d_mean2d[:, 1] * fy * y) * inv_z2

    d_cam = np.stack([d_x, d_y, d_z], axis=1)
    d_mean3d_m = d_cam @ rot

    d_mean3d = np.zeros((n_total, 3))
    d_cov3d = np.zeros((n_total, 3, 3))
    d_mean3d[splats.index] = d_mean3d_m
    d_cov3d[splats.index] = d_cov3d_m
    return d_mean3d, d_cov3d
