"""Deterministic tile-based splat rasterizer with a hand-derived backward."""

from bags.renderer.api import (
    RenderConfig,
    RenderGrads,
    RenderOutput,
    render_backward,
    render_forward,
    render_reference,
    set_threads,
)
from bags.renderer.projection import project_gaussians

__all__ = [
    "RenderConfig",
    "RenderGrads",
    "RenderOutput",
    "render_backward",
    "render_forward",
    "render_reference",
    "set_threads",
    "project_gaussians",
]
