"""Tile rasterization kernels (numba).

Layout: splats arrive compacted and globally sorted by (depth, index).
``assign_tiles`` builds CSR tile lists that inherit this order, so every
tile blends front-to-back deterministically. Pixels are written by exactly
one tile and backward gradients go to per-pair buffers, which makes the
output bit-identical for any thread count.

Per-pair splat data is gathered into one contiguous row so the pixel loop
stays cache-friendly: [mx, my, qxx, qxy, qyy, opacity, bound, r, g, b],
where q is the conic and ``bound`` is the power threshold below which the
splat cannot contribute (covers both the alpha skip and the sigma cutoff).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def assign_tiles(mean2d, radius, width, height, tile):
    """CSR splat-to-tile assignment by bounding box.

    Returns (offsets, ids): tile t owns ids[offsets[t]:offsets[t+1]],
    in the incoming (depth-sorted) splat order.
    """
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    ntiles = ntx * nty
    m = mean2d.shape[0]

    x0 = np.empty(m, np.int64)
    x1 = np.empty(m, np.int64)
    y0 = np.empty(m, np.int64)
    y1 = np.empty(m, np.int64)
    counts = np.zeros(ntiles + 1, np.int64)
    for i in range(m):
        a = int(np.floor((mean2d[i, 0] - radius[i]) / tile))
        b = int(np.floor((mean2d[i, 0] + radius[i]) / tile))
        c = int(np.floor((mean2d[i, 1] - radius[i]) / tile))
        d = int(np.floor((mean2d[i, 1] + radius[i]) / tile))
        x0[i] = max(a, 0)
        x1[i] = min(b, ntx - 1)
        y0[i] = max(c, 0)
        y1[i] = min(d, nty - 1)
        for ty in range(y0[i], y1[i] + 1):
            for tx in range(x0[i], x1[i] + 1):
                counts[ty * ntx + tx + 1] += 1

    offsets = np.cumsum(counts)
    cursor = offsets[:-1].copy()
    ids = np.empty(offsets[-1], np.int64)
    for i in range(m):
        for ty in range(y0[i], y1[i] + 1):
            for tx in range(x0[i], x1[i] + 1):
                t = ty * ntx + tx
                ids[cursor[t]] = i
                cursor[t] += 1
    return offsets, ids


@njit(cache=True)
def gather_pairs(ids, mean2d, conic, opacity, bound, color):
    """Contiguous per-pair splat rows for the pixel loops."""
    p = ids.shape[0]
    sdata = np.empty((p, 10))
    for k in range(p):
        i = ids[k]
        sdata[k, 0] = mean2d[i, 0]
        sdata[k, 1] = mean2d[i, 1]
        sdata[k, 2] = conic[i, 0]
        sdata[k, 3] = conic[i, 1]
        sdata[k, 4] = conic[i, 2]
        sdata[k, 5] = opacity[i]
        sdata[k, 6] = bound[i]
        sdata[k, 7] = color[i, 0]
        sdata[k, 8] = color[i, 1]
        sdata[k, 9] = color[i, 2]
    return sdata


@njit(cache=True, parallel=True)
def blend_forward(sdata, offsets, width, height, tile, t_min, alpha_clamp, bg, image, alpha_map):
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        s = offsets[t]
        e = offsets[t + 1]
        ylim = min((ty + 1) * tile, height)
        xlim = min((tx + 1) * tile, width)
        for py in range(ty * tile, ylim):
            pcy = py + 0.5
            for px in range(tx * tile, xlim):
                pcx = px + 0.5
                trans = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                acc = 0.0
                for k in range(s, e):
                    dx = pcx - sdata[k, 0]
                    dy = pcy - sdata[k, 1]
                    power = -0.5 * (sdata[k, 2] * dx * dx + sdata[k, 4] * dy * dy) - sdata[k, 3] * dx * dy
                    if power < sdata[k, 6]:
                        continue
                    a = sdata[k, 5] * np.exp(power)
                    if a > alpha_clamp:
                        a = alpha_clamp
                    w = a * trans
                    r += sdata[k, 7] * w
                    g += sdata[k, 8] * w
                    b += sdata[k, 9] * w
                    acc += w
                    trans *= 1.0 - a
                    if trans < t_min:
                        break
                image[py, px, 0] = r + bg[0] * trans
                image[py, px, 1] = g + bg[1] * trans
                image[py, px, 2] = b + bg[2] * trans
                alpha_map[py, px] = acc


@njit(cache=True, parallel=True)
def blend_backward(
    sdata, offsets, width, height, tile, t_min, alpha_clamp, bg, g_image, g_alpha, pair_grads
):
    """Adjoint of blend_forward into per-pair buffers.

    pair_grads rows: [dmx, dmy, dqxx, dqxy, dqyy, dopacity, dr, dg, db].
    Re-walks each pixel's blend (forward to find the stop point, then
    back-to-front with transmittance ratios) instead of storing lists.
    """
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        s = offsets[t]
        e = offsets[t + 1]
        if e == s:
            continue
        ylim = min((ty + 1) * tile, height)
        xlim = min((tx + 1) * tile, width)
        for py in range(ty * tile, ylim):
            pcy = py + 0.5
            for px in range(tx * tile, xlim):
                pcx = px + 0.5
                # Pass 1: replay the forward walk to find the stop point.
                trans = 1.0
                last = -1
                for k in range(s, e):
                    dx = pcx - sdata[k, 0]
                    dy = pcy - sdata[k, 1]
                    power = -0.5 * (sdata[k, 2] * dx * dx + sdata[k, 4] * dy * dy) - sdata[k, 3] * dx * dy
                    if power < sdata[k, 6]:
                        continue
                    a = sdata[k, 5] * np.exp(power)
                    if a > alpha_clamp:
                        a = alpha_clamp
                    last = k
                    trans *= 1.0 - a
                    if trans < t_min:
                        break
                if last < 0:
                    continue
                t_fin = trans

                gr = g_image[py, px, 0]
                gg = g_image[py, px, 1]
                gb = g_image[py, px, 2]
                ga = g_alpha[py, px]
                gdotbg = gr * bg[0] + gg * bg[1] + gb * bg[2]

                # Pass 2: back-to-front with suffix color sums.
                sr = 0.0
                sg = 0.0
                sb = 0.0
                t_after = t_fin
                for k in range(last, s - 1, -1):
                    dx = pcx - sdata[k, 0]
                    dy = pcy - sdata[k, 1]
                    qxx = sdata[k, 2]
                    qxy = sdata[k, 3]
                    qyy = sdata[k, 4]
                    power = -0.5 * (qxx * dx * dx + qyy * dy * dy) - qxy * dx * dy
                    if power < sdata[k, 6]:
                        continue
                    raw = sdata[k, 5] * np.exp(power)
                    clamped = raw > alpha_clamp
                    a = alpha_clamp if clamped else raw
                    t_i = t_after / (1.0 - a)

                    w = a * t_i
                    pair_grads[k, 6] += gr * w
                    pair_grads[k, 7] += gg * w
                    pair_grads[k, 8] += gb * w

                    d_alpha = (
                        (gr * sdata[k, 7] + gg * sdata[k, 8] + gb * sdata[k, 9]) * t_i
                        - (gr * sr + gg * sg + gb * sb + (gdotbg - ga) * t_fin) / (1.0 - a)
                    )
                    if not clamped:
                        pair_grads[k, 5] += d_alpha * np.exp(power)
                        d_power = d_alpha * a
                        pair_grads[k, 2] += d_power * (-0.5 * dx * dx)
                        pair_grads[k, 3] += d_power * (-dx * dy)
                        pair_grads[k, 4] += d_power * (-0.5 * dy * dy)
                        pair_grads[k, 0] += d_power * (qxx * dx + qxy * dy)
                        pair_grads[k, 1] += d_power * (qxy * dx + qyy * dy)

                    sr += sdata[k, 7] * w
                    sg += sdata[k, 8] * w
                    sb += sdata[k, 9] * w
                    t_after = t_i
