"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray and records, for each operation, the parent
tensors together with vector-Jacobian closures. ``backward`` seeds the output
gradient and accumulates through the tape in reverse topological order. Only
the operations the denoiser needs are provided; matmul is restricted to a
2-D right operand (every learned layer is a plain linear map).

Inference wraps the same forward code in :func:`no_grad`, which skips tape
construction entirely.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents")

    def __init__(self, data, requires_grad: bool = False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad and _grad_enabled
        self.grad = None
        self._parents = _parents if self.requires_grad else ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff machinery -------------------------------------------------

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate gradients of ``self`` into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + contrib
                else:
                    grads[id(parent)] = contrib

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(
            self.data + other.data,
            self.requires_grad or other.requires_grad,
            (
                (self, lambda g: _unbroadcast(g, self.shape)),
                (other, lambda g: _unbroadcast(g, other.shape)),
            ),
        )
        return out

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, self.requires_grad, ((self, lambda g: -g),))

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor(
            self.data - other.data,
            self.requires_grad or other.requires_grad,
            (
                (self, lambda g: _unbroadcast(g, self.shape)),
                (other, lambda g: _unbroadcast(-g, other.shape)),
            ),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor(
            a * b,
            self.requires_grad or other.requires_grad,
            (
                (self, lambda g: _unbroadcast(g * b, self.shape)),
                (other, lambda g: _unbroadcast(g * a, other.shape)),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor(
            a / b,
            self.requires_grad or other.requires_grad,
            (
                (self, lambda g: _unbroadcast(g / b, self.shape)),
                (other, lambda g: _unbroadcast(-g * a / (b * b), other.shape)),
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        a = self.data
        return Tensor(
            a**exponent,
            self.requires_grad,
            ((self, lambda g: g * exponent * a ** (exponent - 1.0)),),
        )

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        src = self.shape
        return Tensor(
            self.data.reshape(shape),
            self.requires_grad,
            ((self, lambda g: g.reshape(src)),),
        )

    def __getitem__(self, key):
        src_shape = self.shape

        def vjp(g):
            out = np.zeros(src_shape)
            np.add.at(out, key, g)
            return out

        return Tensor(self.data[key], self.requires_grad, ((self, vjp),))

    def sum(self, axis=None, keepdims: bool = False):
        src = self.shape

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, src).copy()
            if not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, src).copy()

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                      self.requires_grad, ((self, vjp),))

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def matmul(a: Tensor, w: Tensor) -> Tensor:
    """(..., F) @ (F, G); the right operand must be 2-D."""
    a, w = as_tensor(a), as_tensor(w)
    if w.ndim != 2:
        raise ValueError("matmul right operand must be 2-D")
    ad, wd = a.data, w.data

    def vjp_a(g):
        return g @ wd.T

    def vjp_w(g):
        f = wd.shape[0]
        return ad.reshape(-1, f).T @ g.reshape(-1, wd.shape[1])

    return Tensor(
        ad @ wd,
        a.requires_grad or w.requires_grad,
        ((a, vjp_a), (w, vjp_w)),
    )


def concatenate(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
        def vjp(g, lo=int(lo), hi=int(hi)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]
        parents.append((t, vjp))
    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        any(t.requires_grad for t in tensors),
        tuple(parents),
    )


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)
    return Tensor(out_data, x.requires_grad, ((x, lambda g: g * out_data),))


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.sqrt(x.data)
    return Tensor(out_data, x.requires_grad,
                  ((x, lambda g: g * 0.5 / out_data),))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-np.abs(x.data)))
    s = np.where(x.data >= 0.0, s, 1.0 - s)
    return Tensor(s, x.requires_grad, ((x, lambda g: g * s * (1.0 - s)),))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), the network's activation."""
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-np.abs(x.data)))
    s = np.where(x.data >= 0.0, s, 1.0 - s)
    return Tensor(
        x.data * s,
        x.requires_grad,
        ((x, lambda g: g * s * (1.0 + x.data * (1.0 - s))),),
    )


def softmax_masked(logits: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Softmax along ``axis`` restricted to entries where ``mask`` is 1.

    The max subtracted for stability is treated as a constant, which leaves
    the derivative unchanged because softmax is shift-invariant.
    """
    shift = logits.data.max(axis=axis, keepdims=True)
    weights = exp(logits - shift) * mask
    return weights / weights.sum(axis=axis, keepdims=True)
