"""Public rasterizer interface: forward, hand-derived backward, oracle.

The renderer works on plain arrays (world means, covariances, opacities,
colors) so callers decide where gradients go; cloud- and rig-level code
seeds the returned gradients into its autodiff tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bags.renderer import kernels
from bags.renderer.projection import ProjectedSplats, project_backward, project_gaussians
from bags.renderer.reference import blend_reference


@dataclass(frozen=True)
class RenderConfig:
    """Rasterizer knobs. Skip thresholds may be zeroed for oracle tests."""

    tile_size: int = 16
    alpha_min: float = 1.0 / 255.0
    t_min: float = 1e-4
    alpha_clamp: float = 0.999
    near_plane: float = 0.01
    sigma_cut: float = 3.0
    lowpass: float = 0.3


@dataclass
class RenderOutput:
    image: np.ndarray  # (H,W,3) float64 in [0, 1+eps]
    alpha: np.ndarray  # (H,W) accumulated opacity in [0,1]
    ctx: "RenderContext | None" = field(default=None, repr=False)


@dataclass
class RenderContext:
    """Everything backward needs to replay the forward pass."""

    splats: ProjectedSplats
    sdata: np.ndarray
    offsets: np.ndarray
    ids: np.ndarray
    cov3d: np.ndarray
    camera: object
    config: RenderConfig
    background: np.ndarray
    n_total: int


@dataclass
class RenderGrads:
    """Gradients at the renderer inputs plus densification statistics."""

    d_means3d: np.ndarray  # (N,3)
    d_cov3d: np.ndarray  # (N,3,3)
    d_opacity: np.ndarray  # (N,)
    d_color: np.ndarray  # (N,3)
    view_grad_mag: np.ndarray  # (N,) view-space positional gradient magnitude
    visible: np.ndarray  # (N,) bool, splat survived culling


def set_threads(n: int) -> int:
    """Clamp and apply the kernel thread count; returns the effective value."""
    import numba

    n_eff = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n_eff)
    return n_eff


def _support_bound(opacity: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Power threshold below which a splat cannot contribute to a pixel."""
    sigma_term = -0.5 * cfg.sigma_cut**2
    if cfg.alpha_min > 0.0:
        with np.errstate(divide="ignore"):
            alpha_term = np.where(opacity > 0.0, np.log(cfg.alpha_min / np.maximum(opacity, 1e-300)), np.inf)
        return np.maximum(alpha_term, sigma_term)
    return np.where(opacity > 0.0, sigma_term, np.inf)


def render_forward(
    means3d: np.ndarray,
    cov3d: np.ndarray,
    opacity: np.ndarray,
    color: np.ndarray,
    camera,
    background,
    config: RenderConfig = RenderConfig(),
) -> RenderOutput:
    """Tile-rasterize Gaussians front-to-back over the background."""
    cov3d = np.asarray(cov3d, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = camera.height, camera.width

    splats = project_gaussians(
        means3d, cov3d, camera, config.near_plane, config.sigma_cut, config.lowpass
    )
    image = np.empty((h, w, 3))
    alpha = np.empty((h, w))
    if splats.count == 0:
        # Fully culled is still a valid forward pass; backward yields zeros.
        image[:] = background
        alpha[:] = 0.0
        ctx = RenderContext(
            splats,
            np.zeros((0, 10)),
            np.zeros(1, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            cov3d,
            camera,
            config,
            background,
            len(means3d),
        )
        return RenderOutput(image, alpha, ctx)

    bound = _support_bound(opacity[splats.index], config)
    offsets, ids = kernels.assign_tiles(splats.mean2d, splats.radius, w, h, config.tile_size)
    sdata = kernels.gather_pairs(
        ids, splats.mean2d, splats.conic, opacity[splats.index], bound, color[splats.index]
    )
    kernels.blend_forward(
        sdata, offsets, w, h, config.tile_size, config.t_min, config.alpha_clamp, background, image, alpha
    )
    ctx = RenderContext(splats, sdata, offsets, ids, cov3d, camera, config, background, len(means3d))
    return RenderOutput(image, alpha, ctx)


def render_backward(output: RenderOutput, g_image: np.ndarray, g_alpha: np.ndarray | None = None) -> RenderGrads:
    """Hand-derived adjoint of :func:`render_forward`.

    ``g_image``/``g_alpha`` are the loss gradients at the composited image
    and the alpha map. Requires the output of a tiled forward pass.
    """
    ctx = output.ctx
    if ctx is None:
        raise ValueError("render_backward needs the context retained by render_forward")
    cam = ctx.camera
    n = ctx.n_total
    g_image = np.ascontiguousarray(g_image, dtype=np.float64)
    if g_alpha is None:
        g_alpha = np.zeros((cam.height, cam.width))
    g_alpha = np.ascontiguousarray(g_alpha, dtype=np.float64)

    grads = RenderGrads(
        d_means3d=np.zeros((n, 3)),
        d_cov3d=np.zeros((n, 3, 3)),
        d_opacity=np.zeros(n),
        d_color=np.zeros((n, 3)),
        view_grad_mag=np.zeros(n),
        visible=np.zeros(n, dtype=bool),
    )
    splats = ctx.splats
    if splats.count == 0:
        return grads
    grads.visible[splats.index] = True

    pair_grads = np.zeros((ctx.ids.shape[0], 9))
    kernels.blend_backward(
        ctx.sdata,
        ctx.offsets,
        cam.width,
        cam.height,
        ctx.config.tile_size,
        ctx.config.t_min,
        ctx.config.alpha_clamp,
        ctx.background,
        g_image,
        g_alpha,
        pair_grads,
    )
    # Fixed-order merge keeps results identical across thread counts.
    per_splat = np.zeros((splats.count, 9))
    np.add.at(per_splat, ctx.ids, pair_grads)

    d_mean2d = per_splat[:, 0:2]
    d_conic = per_splat[:, 2:5]
    d_mean3d, d_cov3d = project_backward(splats, cam, ctx.cov3d, d_mean2d, d_conic, n)
    grads.d_means3d = d_mean3d
    grads.d_cov3d = d_cov3d
    grads.d_opacity[splats.index] = per_splat[:, 5]
    grads.d_color[splats.index] = per_splat[:, 6:9]
    # View-space magnitude in the half-resolution convention used by the
    # densification threshold.
    grads.view_grad_mag[splats.index] = np.linalg.norm(d_mean2d, axis=1) * 0.5 * max(cam.width, cam.height)
    return grads


def render_reference(
    means3d: np.ndarray,
    cov3d: np.ndarray,
    opacity: np.ndarray,
    color: np.ndarray,
    camera,
    background,
    config: RenderConfig = RenderConfig(),
) -> RenderOutput:
    """Untiled per-pixel oracle; same contract, no early termination."""
    cov3d = np.asarray(cov3d, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64).reshape(3)

    splats = project_gaussians(
        means3d, cov3d, camera, config.near_plane, config.sigma_cut, config.lowpass
    )
    bound = _support_bound(opacity[splats.index], config)
    image, alpha = blend_reference(
        splats.mean2d,
        splats.conic,
        opacity[splats.index],
        bound,
        color[splats.index],
        camera.width,
        camera.height,
        config.alpha_clamp,
        background,
    )
    return RenderOutput(image, alpha, None)
