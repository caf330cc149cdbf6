"""Pluggable image-space prior providers for score-distillation supervision.

A provider maps (rendered view, reference image, camera, diffusion step tau,
seed) to an image-space gradient plus a confidence weight. The actual
diffusion model lives behind this seam; bundled implementations are a zero
stub, a ground-truth oracle for synthetic scenes, and an HTTP client.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from bags.errors import ConfigError, DataError


@dataclass
class PriorGradient:
    """Image-space gradient (H,W,3) and the provider's confidence weight."""

    grad: np.ndarray
    weight: float = 1.0


class PriorProvider(Protocol):
    def __call__(self, render, reference, camera, tau: float, seed: int) -> PriorGradient:
        ...


class ZeroProvider:
    """Abstains from guidance; useful as the no-prior ablation."""

    def __call__(self, render, reference, camera, tau, seed) -> PriorGradient:
        return PriorGradient(np.zeros_like(np.asarray(render, dtype=np.float64)), 1.0)


class OracleProvider:
    """Ground-truth novel views stand in for a diffusion model.

    ``ground_truth`` renders the true image for a camera; the returned
    gradient 2*(render - truth) is exactly the L2 reconstruction gradient,
    which makes the plumbing testable end to end.
    """

    def __init__(self, ground_truth: Callable):
        self._ground_truth = ground_truth

    def __call__(self, render, reference, camera, tau, seed) -> PriorGradient:
        render = np.asarray(render, dtype=np.float64)
        truth = np.asarray(self._ground_truth(camera), dtype=np.float64)
        if truth.shape != render.shape:
            raise DataError(
                f"oracle view shape {truth.shape} does not match render {render.shape}"
            )
        return PriorGradient(2.0 * (render - truth), 1.0)


def encode_png_b64(image: np.ndarray) -> str:
    """Lossy 8-bit PNG of a float image in [0,1], base64-encoded."""
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    buf = io.BytesIO()
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class RemoteProvider:
    """JSON-over-HTTP client for an external guidance service.

    Request: {render, reference: base64 PNG, camera: look-at spec, tau, seed}.
    Response: {grad: base64 little-endian float32 of shape (H,W,3), weight}.
    Network errors are retried; the final failure propagates to the caller,
    which treats the step as skippable.
    """

    def __init__(self, url: str, timeout: float = 10.0, retries: int = 2):
        if not url:
            raise ConfigError("remote prior needs a URL")
        self.url = url
        self.timeout = float(timeout)
        self.retries = int(retries)

    def __call__(self, render, reference, camera, tau, seed) -> PriorGradient:
        import requests

        render = np.asarray(render, dtype=np.float64)
        payload = {
            "render": encode_png_b64(render),
            "reference": encode_png_b64(reference),
            "camera": camera.to_spec(),
            "tau": float(tau),
            "seed": int(seed),
        }
        last_error = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(self.url, json=payload, timeout=self.timeout)
                resp.raise_for_status()
                break
            except requests.RequestException as exc:
                last_error = exc
        else:
            raise last_error
        body = resp.json()
        raw = base64.b64decode(body["grad"])
        expect = render.size * 4
        if len(raw) != expect:
            raise DataError(
                f"remote gradient payload is {len(raw)} bytes, expected {expect}"
            )
        grad = np.frombuffer(raw, dtype="<f4").reshape(render.shape).astype(np.float64)
        return PriorGradient(grad, float(body["weight"]))
