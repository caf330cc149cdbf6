"""Adam optimizer over autodiff tensors, with row-remappable state.

Gaussian cloud parameters change row count when splats are cloned, split,
or pruned. ``replace_param`` swaps a tensor for its resized successor and
carries first/second-moment rows along: surviving rows keep their history,
fresh rows start cold.
"""

from __future__ import annotations

import numpy as np

from bags.autodiff import Tensor


class Adam:
    """Adam with per-group learning rates.

    Args:
        groups: list of dicts, each with keys "params" (list of Tensor),
            "lr" (float), and optionally "name".
        betas: exponential decay rates for the moment estimates.
        eps: denominator offset. Small by design; gradients here are tiny.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-15):
        self.groups = []
        self._state: dict[int, dict] = {}
        self.beta1, self.beta2 = betas
        self.eps = eps
        for g in groups:
            params = list(g["params"])
            for p in params:
                if not isinstance(p, Tensor):
                    raise TypeError("optimizer params must be Tensors")
                self._state[id(p)] = {
                    "m": np.zeros_like(p.data),
                    "v": np.zeros_like(p.data),
                    "t": 0,
                }
            self.groups.append({"params": params, "lr": float(g["lr"]), "name": g.get("name", "")})

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self) -> None:
        for g in self.groups:
            lr = g["lr"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                st = self._state[id(p)]
                st["t"] += 1
                t = st["t"]
                grad = p.grad
                st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * grad
                st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * grad * grad
                m_hat = st["m"] / (1.0 - self.beta1**t)
                v_hat = st["v"] / (1.0 - self.beta2**t)
                p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def set_lr(self, name: str, lr: float) -> None:
        for g in self.groups:
            if g["name"] == name:
                g["lr"] = float(lr)
                return
        raise KeyError(f"no optimizer group named {name!r}")

    def replace_param(self, old: Tensor, new: Tensor, row_map: np.ndarray) -> None:
        """Swap ``old`` for ``new`` (same trailing dims, new leading row count).

        ``row_map`` has one entry per row of ``new``: the source row in
        ``old`` to inherit optimizer state from, or -1 for a cold start.
        """
        row_map = np.asarray(row_map, dtype=np.int64)
        if row_map.shape[0] != new.data.shape[0]:
            raise ValueError("row_map length must match new row count")
        st = self._state.pop(id(old), None)
        if st is None:
            raise KeyError("unknown parameter")
        m = np.zeros_like(new.data)
        v = np.zeros_like(new.data)
        keep = row_map >= 0
        m[keep] = st["m"][row_map[keep]]
        v[keep] = st["v"][row_map[keep]]
        self._state[id(new)] = {"m": m, "v": v, "t": st["t"]}
        for g in self.groups:
            g["params"] = [new if p is old else p for p in g["params"]]

    def state_rows(self, p: Tensor) -> tuple[np.ndarray, np.ndarray]:
        st = self._state[id(p)]
        return st["m"], st["v"]
