"""Brute-force splat renderer: per-pixel loop over every projected splat.

Correctness oracle for the tiled kernels. No tiling and no transmittance
early-out; the per-splat support bound (alpha skip + sigma cutoff) and the
alpha clamp are shared with the tiled path so both see the same splat set.
"""

from __future__ import annotations

import numpy as np


def blend_reference(
    mean2d: np.ndarray,
    conic: np.ndarray,
    opacity: np.ndarray,
    bound: np.ndarray,
    color: np.ndarray,
    width: int,
    height: int,
    alpha_clamp: float,
    background: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Blend depth-sorted splats over every pixel; returns (image, alpha)."""
    image = np.empty((height, width, 3))
    alpha_map = np.empty((height, width))
    m = mean2d.shape[0]
    if m == 0:
        image[:] = background
        alpha_map[:] = 0.0
        return image, alpha_map

    xs = np.arange(width) + 0.5
    rows_per_block = max(1, int(2_000_000 // max(m * width, 1)) or 1)
    rows_per_block = max(1, min(height, rows_per_block))
    for y0 in range(0, height, rows_per_block):
        y1 = min(y0 + rows_per_block, height)
        ys = np.arange(y0, y1) + 0.5
        dx = xs[None, :, None] - mean2d[None, None, :, 0].reshape(1, 1, m)
        dx = np.broadcast_to(dx, (y1 - y0, width, m))
        dy = ys[:, None, None] - mean2d[None, None, :, 1].reshape(1, 1, m)
        dy = np.broadcast_to(dy, (y1 - y0, width, m))
        power = (
            -0.5 * (conic[:, 0] * dx * dx + conic[:, 2] * dy * dy) - conic[:, 1] * dx * dy
        )
        a = np.minimum(opacity * np.exp(power), alpha_clamp)
        a = np.where(power >= bound, a, 0.0)
        one_minus = 1.0 - a
        trans = np.cumprod(one_minus, axis=2)
        t_excl = np.concatenate([np.ones_like(trans[:, :, :1]), trans[:, :, :-1]], axis=2)
        w = a * t_excl
        block = np.einsum("ywm,mc->ywc", w, color)
        t_fin = trans[:, :, -1]
        image[y0:y1] = block + t_fin[:, :, None] * background
        alpha_map[y0:y1] = w.sum(axis=2)
    return image, alpha_map
