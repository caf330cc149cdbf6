"""Training objectives: masked photometric terms, a multi-scale structural
dissimilarity, the SVD rigidity regularizer, and score-distillation plumbing.

Each loss returns its scalar value together with the gradient at its direct
input; the trainer routes those gradients into the renderer backward pass or
the autodiff tape as appropriate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

import bags.autodiff as ad
from bags import linalg
from bags.errors import ConfigError, DataError, NumericsError

log = logging.getLogger("bags")


@dataclass(frozen=True)
class LossWeights:
    sds: float = 1e-4
    rigid: float = 0.1
    perceptual: float = 0.1
    l1: float = 0.1
    mask: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0.0:
                raise ConfigError(f"loss weight {f.name} must be >= 0")


def total_loss(terms: dict, weights: LossWeights) -> float:
    """Weighted sum of the named loss values."""
    return float(
        weights.sds * terms.get("sds", 0.0)
        + weights.rigid * terms.get("rigid", 0.0)
        + weights.perceptual * terms.get("perceptual", 0.0)
        + weights.l1 * terms.get("l1", 0.0)
        + weights.mask * terms.get("mask", 0.0)
    )


# -- photometric terms --------------------------------------------------------


def l1_loss(render: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Mean absolute error over masked pixels; returns (value, image grad)."""
    render = np.asarray(render, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if render.shape != target.shape or mask.shape != render.shape[:2]:
        raise DataError("l1 loss inputs must share their image shape")
    count = mask.sum()
    if count == 0.0:
        raise DataError("l1 loss is undefined for an all-zero mask")
    diff = render - target
    m = mask[:, :, None]
    denom = count * render.shape[2]
    value = float(np.abs(diff * m).sum() / denom)
    grad = np.sign(diff) * m / denom
    return value, grad


def mask_loss(alpha: np.ndarray, mask: np.ndarray):
    """Mean |accumulated alpha - mask| over the image; (value, alpha grad)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if alpha.shape != mask.shape:
        raise DataError("alpha map and mask shapes differ")
    diff = alpha - mask
    value = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    return value, grad


# -- structural dissimilarity --------------------------------------------------


def _valid_box_mean(t: ad.Tensor, window: int) -> ad.Tensor:
    """Separable valid-mode box mean over the two leading (H,W) axes."""
    h, w = t.data.shape[0], t.data.shape[1]
    w_out = w - window + 1
    acc = t[:, 0:w_out]
    for k in range(1, window):
        acc = acc + t[:, k : k + w_out]
    h_out = h - window + 1
    acc2 = acc[0:h_out]
    for k in range(1, window):
        acc2 = acc2 + acc[k : k + h_out]
    return acc2 * (1.0 / float(window * window))


def _avg_pool2(t: ad.Tensor) -> ad.Tensor:
    h = (t.data.shape[0] // 2) * 2
    w = (t.data.shape[1] // 2) * 2
    t = t[0:h, 0:w]
    return (t[0::2, 0::2] + t[1::2, 0::2] + t[0::2, 1::2] + t[1::2, 1::2]) * 0.25


def _ssim_mean(x: ad.Tensor, y: ad.Tensor, window: int) -> ad.Tensor:
    c1, c2 = 0.01**2, 0.03**2
    mu_x = _valid_box_mean(x, window)
    mu_y = _valid_box_mean(y, window)
    var_x = _valid_box_mean(x * x, window) - mu_x * mu_x
    var_y = _valid_box_mean(y * y, window) - mu_y * mu_y
    cov = _valid_box_mean(x * y, window) - mu_x * mu_y
    num = (mu_x * mu_y * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return ad.tmean(num / den)


def perceptual_loss(render: np.ndarray, target: np.ndarray, scales: int = 3, window: int = 7):
    """Multi-scale structural dissimilarity; returns (value, image grad).

    Dyadic pyramid of ``scales`` levels, box windows of ``window`` pixels.
    Stands in for a feature-based perceptual metric; external providers can
    replace it at the trainer seam.
    """
    render = np.asarray(render, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if render.shape != target.shape:
        raise DataError("perceptual loss inputs must share a shape")
    h, w = render.shape[:2]
    coarse = min(h, w) // 2 ** (scales - 1)
    if coarse < window:
        raise DataError(
            f"{h}x{w} image is smaller than the {window}px window at scale {scales}"
        )
    x = ad.Tensor(render.copy(), requires_grad=True)
    y = ad.Tensor(target.copy())
    cur_x, cur_y = x, y
    loss = None
    for s in range(scales):
        term = 1.0 - _ssim_mean(cur_x, cur_y, window)
        loss = term if loss is None else loss + term
        if s + 1 < scales:
            cur_x = _avg_pool2(cur_x)
            cur_y = _avg_pool2(cur_y)
    loss = loss * (1.0 / scales)
    loss.backward()
    return float(loss.data), x.grad


# -- rigidity -------------------------------------------------------------------


def rigid_loss(jacobians: np.ndarray):
    """Elementwise L1 distance to the nearest proper rotation, averaged.

    The rotation target is held constant in the gradient (detached), and the
    absolute-value subgradient at ties is zero; ties are detected at float
    resolution since the SVD reconstructs a rotation only to ~1e-15, and
    contribute nothing to the value either, so exact rotations score exactly
    zero. Returns (value, per-matrix gradient).
    """
    j = np.asarray(jacobians, dtype=np.float64)
    if j.ndim != 3 or j.shape[1:] != (3, 3):
        raise DataError(f"rigid loss expects (N,3,3) warp Jacobians, got {j.shape}")
    if not np.isfinite(j).all():
        raise NumericsError("rigid loss received non-finite Jacobians")
    n = j.shape[0]
    target = linalg.nearest_rotation(j)
    diff = j - target
    live = np.abs(diff) > 1e-12  # SVD reconstruction noise counts as a tie
    value = float(np.abs(np.where(live, diff, 0.0)).sum() / n)
    grad = np.where(live, np.sign(diff), 0.0) / n
    return value, grad


# -- score distillation ----------------------------------------------------------


def sds_step(provider, render, reference, camera, tau: float, weight: float = 1.0, seed: int = 0) -> np.ndarray:
    """One stochastic score-distillation sample as an image-space gradient.

    The provider's gradient is scaled by its own weight and the loss weight,
    ready to seed the renderer backward pass. Provider failures make the
    step a logged no-op rather than aborting training.
    """
    render = np.asarray(render, dtype=np.float64)
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"diffusion step tau must lie in (0,1), got {tau}")
    try:
        result = provider(render, reference, camera, tau, seed)
        grad = np.asarray(result.grad, dtype=np.float64)
        if grad.shape != render.shape:
            raise DataError(
                f"prior gradient shape {grad.shape} does not match render {render.shape}"
            )
        if not np.isfinite(grad).all():
            raise NumericsError("prior gradient contains non-finite values")
    except Exception as exc:  # provider contract: failures are skippable
        log.warning("prior provider failed, skipping SDS step: %s", exc)
        return np.zeros_like(render)
    return grad * (weight * float(result.weight))
