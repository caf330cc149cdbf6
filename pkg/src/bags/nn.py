"""Minimal fully-connected networks on the autodiff tape."""

from __future__ import annotations

import numpy as np

from bags import autodiff as ad


class Mlp:
    """Fully-connected net with softplus hidden activations, linear output.

    Weights are He-initialized; the output layer is scaled down so a fresh
    network predicts near its bias. That keeps early bone poses close to
    the identity instead of starting from large random transforms.
    """

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        out_dim: int,
        n_layers: int = 4,
        rng: np.random.Generator | None = None,
        final_scale: float = 1e-4,
    ):
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.n_layers = n_layers
        self.weights: list[ad.Tensor] = []
        self.biases: list[ad.Tensor] = []
        dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
        for i in range(n_layers):
            fan_in = dims[i]
            std = np.sqrt(2.0 / fan_in)
            w = rng.normal(0.0, std, size=(dims[i], dims[i + 1]))
            b = np.zeros(dims[i + 1])
            if i == n_layers - 1:
                w = w * final_scale
            self.weights.append(ad.Tensor(w, requires_grad=True))
            self.biases.append(ad.Tensor(b, requires_grad=True))

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        """Apply the network to (..., in_dim) input."""
        shape = x.data.shape
        if shape[-1] != self.in_dim:
            raise ValueError(f"expected last dim {self.in_dim}, got {shape[-1]}")
        h = ad.reshape(x, (-1, self.in_dim))
        for i in range(self.n_layers):
            h = ad.matmul(h, self.weights[i]) + self.biases[i]
            if i < self.n_layers - 1:
                h = ad.softplus(h)
        return ad.reshape(h, shape[:-1] + (self.out_dim,))

    def parameters(self) -> list[ad.Tensor]:
        return list(self.weights) + list(self.biases)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i in range(self.n_layers):
            out[f"w{i}"] = self.weights[i].data.copy()
            out[f"b{i}"] = self.biases[i].data.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i in range(self.n_layers):
            w = np.asarray(state[f"w{i}"], dtype=np.float64)
            b = np.asarray(state[f"b{i}"], dtype=np.float64)
            if w.shape != self.weights[i].data.shape or b.shape != self.biases[i].data.shape:
                raise ValueError(f"layer {i} shape mismatch")
            self.weights[i].data = w
            self.biases[i].data = b
