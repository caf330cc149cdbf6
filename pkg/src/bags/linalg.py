"""Small fixed-size linear algebra: batched 3x3 SVD, rotations, quaternions.

Everything here is plain numpy. Tape-aware variants (used where gradients
must flow) live at the bottom and build on :mod:`bags.autodiff` ops.
"""

from __future__ import annotations

import numpy as np

from bags import autodiff as ad
from bags.errors import NumericsError

_JACOBI_SWEEPS = 30
_JACOBI_TOL = 1e-12


def svd3(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of 3x3 matrices, batched over leading axes.

    Returns (U, S, V) with m = U @ diag(S) @ V^T, singular values
    non-negative and descending, U and V orthonormal. Implemented as a
    cyclic Jacobi eigensolver on m^T m; left vectors recovered as
    m v / sigma with Gram-Schmidt completion of null columns.

    Args:
        m: array of shape (..., 3, 3) with finite entries.

    Returns:
        U (..., 3, 3), S (..., 3), V (..., 3, 3).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericsError("svd3: non-finite input")
    batch_shape = m.shape[:-2]
    a = m.reshape(-1, 3, 3)
    n = a.shape[0]

    ata = np.einsum("nji,njk->nik", a, a)
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    scale = np.maximum(np.abs(ata).max(axis=(1, 2)), 1e-300)

    for _ in range(_JACOBI_SWEEPS):
        off = np.abs(ata[:, 0, 1]) + np.abs(ata[:, 0, 2]) + np.abs(ata[:, 1, 2])
        if np.all(off <= _JACOBI_TOL * scale):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = ata[:, p, q]
            active = np.abs(apq) > _JACOBI_TOL * scale
            if not active.any():
                continue
            app = ata[:, p, p]
            aqq = ata[:, q, q]
            theta = np.zeros(n)
            np.divide(aqq - app, 2.0 * apq, out=theta, where=active)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
            t[np.sign(theta) == 0] = 1.0 / (np.abs(theta[np.sign(theta) == 0]) + 1.0)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # Rotate rows/cols p,q of ata and cols p,q of v.
            for mat, col in ((ata, True), (v, False)):
                mp = mat[:, :, p].copy()
                mq = mat[:, :, q].copy()
                mat[:, :, p] = c[:, None] * mp - s[:, None] * mq
                mat[:, :, q] = s[:, None] * mp + c[:, None] * mq
                if col:
                    rp = mat[:, p, :].copy()
                    rq = mat[:, q, :].copy()
                    mat[:, p, :] = c[:, None] * rp - s[:, None] * rq
                    mat[:, q, :] = s[:, None] * rp + c[:, None] * rq
            # Symmetrize the rotated pair against drift.
            ata[:, p, q] = np.where(active, 0.0, ata[:, p, q])
            ata[:, q, p] = ata[:, p, q]

    lam = np.stack([ata[:, 0, 0], ata[:, 1, 1], ata[:, 2, 2]], axis=1)
    lam = np.maximum(lam, 0.0)
    order = np.argsort(-lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    sig = np.sqrt(lam)
    # The eigensolve leaves O(eps * sig0^2) residue in analytically zero
    # eigenvalues, i.e. O(sqrt(eps) * sig0) in sigma. Below that floor a
    # singular value is noise; zero it and rebuild its left vector instead.
    sig = np.where(sig > sig[:, :1] * 1e-7, sig, 0.0)

    # Left singular vectors: u_i = m v_i / sigma_i where sigma_i is usable.
    av = np.einsum("nij,njk->nik", a, v)
    u = np.zeros_like(a)
    for i in range(3):
        ok = sig[:, i] > 0
        col = av[ok, :, i] / sig[ok, i, None]
        norm = np.linalg.norm(col, axis=1, keepdims=True)
        u[ok, :, i] = col / np.maximum(norm, 1e-300)
    # Complete missing columns to an orthonormal basis.
    deficient = sig == 0.0
    if deficient.any():
        for row in np.nonzero(deficient.any(axis=1))[0]:
            cols = [u[row, :, i] for i in range(3) if not deficient[row, i]]
            for i in range(3):
                if not deficient[row, i]:
                    continue
                cand = None
                for basis in np.eye(3):
                    w = basis.copy()
                    for cvec in cols:
                        w = w - cvec * (cvec @ w)
                    if np.linalg.norm(w) > 1e-6:
                        cand = w / np.linalg.norm(w)
                        break
                u[row, :, i] = cand
                cols.append(cand)

    u = u.reshape(*batch_shape, 3, 3)
    sig = sig.reshape(*batch_shape, 3)
    v = v.reshape(*batch_shape, 3, 3)
    return u, sig, v


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Closest proper rotation to each 3x3 matrix (polar factor, det-corrected).

    Computes U V^T from the SVD and, where det(U V^T) < 0, flips the sign
    of U's last column (the one paired with the smallest singular value)
    so the result lands in SO(3).
    """
    u, _, v = svd3(m)
    r = np.einsum("...ij,...kj->...ik", u, v)
    det = np.linalg.det(r)
    flip = det < 0
    if np.any(flip):
        u = u.copy()
        u[flip, :, 2] *= -1.0
        r = np.einsum("...ij,...kj->...ik", u, v)
    return r


# -- quaternions (w, x, y, z convention) ------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) -> rotation matrix(ces); batched over leading axes."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix(ces) -> unit quaternion with non-negative w."""
    r = np.asarray(r, dtype=np.float64)
    batch = r.shape[:-2]
    rr = r.reshape(-1, 3, 3)
    n = rr.shape[0]
    q = np.empty((n, 4))
    for i in range(n):
        m = rr[i]
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q[i] = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q[i] = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] >= m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q[i] = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q[i] = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        if q[i, 0] < 0:
            q[i] = -q[i]
    return quat_normalize(q.reshape(*batch, 4))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_slerp(q0: np.ndarray, q1: np.ndarray, u: float) -> np.ndarray:
    """Spherical interpolation between two unit quaternions."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-10:
        return quat_normalize(q0 + u * (q1 - q0))
    theta = np.arccos(np.clip(d, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - u) * theta) / s) * q0 + (np.sin(u * theta) / s) * q1


def axis_angle_quat(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


# -- tape-aware variants -----------------------------------------------------


def quat_to_rotmat_t(q: ad.Tensor) -> ad.Tensor:
    """Tape version of :func:`quat_to_rotmat` for (..., 4) tensors."""
    qn = ad.normalize(q, axis=-1)
    w, x, y, z = (qn[..., i] for i in range(4))
    two = 2.0
    r00 = 1.0 - two * (y * y + z * z)
    r01 = two * (x * y - w * z)
    r02 = two * (x * z + w * y)
    r10 = two * (x * y + w * z)
    r11 = 1.0 - two * (x * x + z * z)
    r12 = two * (y * z - w * x)
    r20 = two * (x * z - w * y)
    r21 = two * (y * z + w * x)
    r22 = 1.0 - two * (x * x + y * y)
    rows = [
        ad.stack([r00, r01, r02], axis=-1),
        ad.stack([r10, r11, r12], axis=-1),
        ad.stack([r20, r21, r22], axis=-1),
    ]
    return ad.stack(rows, axis=-2)
