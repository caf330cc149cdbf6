"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` wraps an ndarray plus a lazily allocated gradient buffer.
Operations record their parents and a backward closure; ``backward``
(or ``backward_from`` for multiple seed points) walks the graph in
reverse topological order and accumulates gradients with ``+=``, so
repeated backward passes add up until the buffers are cleared.

Scope is deliberately small: dense ops needed by the bone MLPs, the
skinning warp, and the image losses. The splat rasterizer does not use
this module; its gradients are hand-derived and injected here as seeds.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from bags.errors import NumericsError

# Set by tests to catch non-finite values at the op where they appear.
CHECK_FINITE = False


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ):
        self.data = _as_array(data)
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise NumericsError("non-finite values in tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- basic protocol -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        g = _as_array(g)
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- graph walk ------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        backward_from([(self, grad)])

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / _as_array(other))

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward_from(seeds: Iterable[tuple[Tensor, np.ndarray]]):
    """Run one reverse pass seeded at several tensors at once.

    Gradients accumulate into ``.grad`` of every tensor on the path that
    has ``requires_grad``. Seeds into non-grad tensors are ignored.
    """
    seeds = [(t, _as_array(g)) for t, g in seeds]
    roots = [t for t, _ in seeds if t.requires_grad]
    # Iterative topological sort over the union of the seed graphs.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(r, False) for r in roots]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    flowing: dict[int, np.ndarray] = {}
    for t, g in seeds:
        if not t.requires_grad:
            continue
        if g.shape != t.data.shape:
            raise ValueError(f"seed gradient shape {g.shape} != tensor shape {t.data.shape}")
        if id(t) in flowing:
            flowing[id(t)] = flowing[id(t)] + g
        else:
            flowing[id(t)] = g.copy()

    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        node.accumulate_grad(g)
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if CHECK_FINITE and not np.all(np.isfinite(pg)):
                raise NumericsError("non-finite gradient")
            if id(p) in flowing:
                flowing[id(p)] = flowing[id(p)] + pg
            else:
                flowing[id(p)] = np.array(pg, dtype=np.float64)


# -- elementwise ops ------------------------------------------------------


def add(a, b):
    a, b = _ensure(a), _ensure(b)
    out = a.data + b.data
    return Tensor(
        out,
        parents=(a, b),
        backward=lambda g: (unbroadcast(g, a.data.shape), unbroadcast(g, b.data.shape)),
    )


def mul(a, b):
    a, b = _ensure(a), _ensure(b)
    out = a.data * b.data
    return Tensor(
        out,
        parents=(a, b),
        backward=lambda g: (
            unbroadcast(g * b.data, a.data.shape),
            unbroadcast(g * a.data, b.data.shape),
        ),
    )


def reciprocal(a):
    a = _ensure(a)
    inv = 1.0 / a.data
    return Tensor(inv, parents=(a,), backward=lambda g: (-g * inv * inv,))


def power(a, p: float):
    a = _ensure(a)
    out = a.data ** p
    return Tensor(out, parents=(a,), backward=lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    a = _ensure(a)
    out = np.exp(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: (g * out,))


def log(a):
    a = _ensure(a)
    return Tensor(np.log(a.data), parents=(a,), backward=lambda g: (g / a.data,))


def sqrt(a):
    a = _ensure(a)
    out = np.sqrt(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: (g * 0.5 / out,))


def tanh(a):
    a = _ensure(a)
    out = np.tanh(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = _ensure(a)
    out = expit(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: (g * out * (1.0 - out),))


def softplus(a):
    """log(1 + e^x), computed stably; derivative is sigmoid(x)."""
    a = _ensure(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return Tensor(out, parents=(a,), backward=lambda g: (g * expit(x),))


def sin(a):
    a = _ensure(a)
    return Tensor(np.sin(a.data), parents=(a,), backward=lambda g: (g * np.cos(a.data),))


def cos(a):
    a = _ensure(a)
    return Tensor(np.cos(a.data), parents=(a,), backward=lambda g: (-g * np.sin(a.data),))


def absolute(a):
    """|x| with subgradient 0 at x = 0."""
    a = _ensure(a)
    return Tensor(np.abs(a.data), parents=(a,), backward=lambda g: (g * np.sign(a.data),))


# -- reductions and shape ops ---------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _ensure(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Tensor(out, parents=(a,), backward=bwd)


def tmean(a, axis=None, keepdims=False):
    a = _ensure(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = _ensure(a)
    out = a.data.reshape(shape)
    return Tensor(out, parents=(a,), backward=lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None):
    a = _ensure(a)
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return Tensor(out, parents=(a,), backward=lambda g: (np.transpose(g, inv),))


def concatenate(tensors, axis=0):
    tensors = [_ensure(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, parents=tuple(tensors), backward=bwd)


def stack(tensors, axis=0):
    tensors = [_ensure(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return Tensor(out, parents=tuple(tensors), backward=bwd)


def take(a, idx):
    """Basic and integer-array indexing; backward scatter-adds."""
    a = _ensure(a)
    out = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor(out, parents=(a,), backward=bwd)


def broadcast_to(a, shape):
    a = _ensure(a)
    out = np.broadcast_to(a.data, shape)
    return Tensor(out.copy(), parents=(a,), backward=lambda g: (unbroadcast(g, a.data.shape),))


# -- contractions ----------------------------------------------------------


def matmul(a, b):
    a, b = _ensure(a), _ensure(b)
    out = a.data @ b.data
    if a.data.ndim == 1 or b.data.ndim == 1:
        raise ValueError("matmul requires >=2-D operands; reshape vectors explicitly")

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.data.shape), unbroadcast(gb, b.data.shape)

    return Tensor(out, parents=(a, b), backward=bwd)


def einsum(spec: str, a, b):
    """Two-operand einsum.

    Backward swaps the output with the differentiated operand, which is
    valid when each operand's indices all appear in the other operand or
    in the output (no internal diagonal/trace subscripts).
    """
    a, b = _ensure(a), _ensure(b)
    ins, out_spec = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    if len(set(sa)) != len(sa) or len(set(sb)) != len(sb):
        raise ValueError(f"repeated indices within one operand unsupported: {spec}")
    for ch in sa:
        if ch not in sb and ch not in out_spec:
            raise ValueError(f"index {ch} of first operand is summed internally: {spec}")
    for ch in sb:
        if ch not in sa and ch not in out_spec:
            raise ValueError(f"index {ch} of second operand is summed internally: {spec}")
    out = np.einsum(spec, a.data, b.data)

    def bwd(g):
        ga = np.einsum(f"{out_spec},{sb}->{sa}", g, b.data)
        gb = np.einsum(f"{out_spec},{sa}->{sb}", g, a.data)
        return ga, gb

    return Tensor(out, parents=(a, b), backward=bwd)


def softmax(a, axis=-1):
    a = _ensure(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, parents=(a,), backward=bwd)


def normalize(a, axis=-1, eps=0.0):
    """x / ||x|| along ``axis``."""
    a = _ensure(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True)) + eps
    out = a.data / n

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - out * dot) / n,)

    return Tensor(out, parents=(a,), backward=bwd)


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Escape hatch for ops with hand-written adjoints (filters, pooling)."""
    return Tensor(data, parents=parents, backward=backward)
