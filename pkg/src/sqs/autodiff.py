"""Minimal vectorized reverse-mode automatic differentiation over numpy arrays.

Every ``Tensor`` wraps a float64 ndarray and records the operation that
produced it.  Calling :meth:`Tensor.backward` walks the recorded graph in
reverse topological order and accumulates gradients into the leaf tensors.
All arithmetic is double precision; broadcasting follows numpy rules and the
backward pass sums gradients over broadcast axes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "concat",
    "exp",
    "log",
    "sigmoid",
    "relu",
    "clip",
    "softmax",
    "logsumexp",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
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
    __slots__ = ("value", "grad", "_parents", "_vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjps = vjps

    # -- graph bookkeeping ------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def backward(self, upstream=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if upstream is None:
            upstream = np.ones_like(self.value)
        else:
            upstream = np.asarray(upstream, dtype=np.float64)
            if upstream.shape != self.value.shape:
                raise ValueError("upstream shape mismatch")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): upstream}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                pg = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        return Tensor(
            self.value + other.value,
            (self, other),
            (
                lambda g, s=self.value.shape: _unbroadcast(g, s),
                lambda g, s=other.value.shape: _unbroadcast(g, s),
            ),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, (self,), (lambda g: -g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        return Tensor(
            self.value * other.value,
            (self, other),
            (
                lambda g, o=other.value, s=self.value.shape: _unbroadcast(g * o, s),
                lambda g, a=self.value, s=other.value.shape: _unbroadcast(g * a, s),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        return Tensor(
            self.value / other.value,
            (self, other),
            (
                lambda g, o=other.value, s=self.value.shape: _unbroadcast(g / o, s),
                lambda g, a=self.value, o=other.value, s=other.value.shape: _unbroadcast(
                    -g * a / (o * o), s
                ),
            ),
        )

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar exponents are supported")
        return Tensor(
            self.value**p,
            (self,),
            (lambda g, a=self.value: g * p * a ** (p - 1),),
        )

    def __matmul__(self, other):
        other = _as_tensor(other)
        if self.value.ndim != 2 or other.value.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        return Tensor(
            self.value @ other.value,
            (self, other),
            (
                lambda g, o=other.value: g @ o.T,
                lambda g, a=self.value: a.T @ g,
            ),
        )

    def __rmatmul__(self, other):
        return _as_tensor(other) @ self

    # -- shape ops --------------------------------------------------------

    def __getitem__(self, idx):
        def vjp(g, idx=idx, shape=self.value.shape):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return Tensor(self.value[idx], (self,), (vjp,))

    def reshape(self, *shape):
        return Tensor(
            self.value.reshape(*shape),
            (self,),
            (lambda g, s=self.value.shape: g.reshape(s),),
        )

    @property
    def T(self):
        return Tensor(self.value.T, (self,), (lambda g: g.T,))

    def sum(self, axis=None, keepdims=False):
        def vjp(g, axis=axis, keepdims=keepdims, shape=self.value.shape):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,), (vjp,))

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(value) -> Tensor:
    """Create a leaf tensor."""
    return Tensor(value)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    vjps = []
    for i in range(len(tensors)):
        def vjp(g, i=i, splits=splits, axis=axis):
            return np.split(g, splits, axis=axis)[i]

        vjps.append(vjp)
    return Tensor(
        np.concatenate([t.value for t in tensors], axis=axis),
        tuple(tensors),
        tuple(vjps),
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.value)
    return Tensor(out, (x,), (lambda g, o=out: g * o,))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), (x,), (lambda g, a=x.value: g / a,))


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.value)
    pos = x.value >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.value[pos]))
    ex = np.exp(x.value[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out, (x,), (lambda g, o=out: g * o * (1.0 - o),))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return Tensor(
        np.where(mask, x.value, 0.0), (x,), (lambda g, m=mask: g * m,)
    )


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through unclipped entries only."""
    mask = (x.value >= lo) & (x.value <= hi)
    return Tensor(np.clip(x.value, lo, hi), (x,), (lambda g, m=mask: g * m,))


def softmax(x: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax; the max shift is treated as a constant."""
    shift = x - np.max(x.value, axis=axis, keepdims=True)
    e = exp(shift)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(x: Tensor, axis=-1) -> Tensor:
    m = np.max(x.value, axis=axis, keepdims=True)
    s = exp(x - m).sum(axis=axis, keepdims=False)
    return log(s) + Tensor(np.squeeze(m, axis=axis))
