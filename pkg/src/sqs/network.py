"""Fully connected ReLU networks with a shift-style bias in the hidden layers.

Hidden layer ``l`` maps ``h -> max(0, W_l h - b_l)``; the output layer is the
plain affine map ``W h + b``.  Parameters flatten into a single vector
(row-major weights, then biases, layers in order) through :class:`ParamLayout`,
which is the indexing backbone for the rest of the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class DimensionError(ValueError):
    """Raised when layer shapes or input shapes do not chain."""


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise DimensionError(f"bad layer shapes {self.W.shape} / {self.b.shape}")


class Network:
    """Immutable stack of :class:`Layer` objects."""

    def __init__(self, layers):
        if not layers:
            raise DimensionError("network needs at least one layer")
        self.layers = [l if isinstance(l, Layer) else Layer(*l) for l in layers]
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise DimensionError(
                    f"layer dims do not chain: {a.W.shape} -> {b.W.shape}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def num_params(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise DimensionError(f"expected input of shape ({self.input_dim},)")
        return self.forward_batch(x[None, :])[0]

    def forward_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionError(f"expected batch of shape (n, {self.input_dim})")
        h = X
        for layer in self.layers[:-1]:
            h = np.maximum(0.0, h @ layer.W.T - layer.b)
        out = self.layers[-1]
        return h @ out.W.T + out.b


@dataclass(frozen=True)
class LayerSlots:
    w_start: int
    w_stop: int
    b_start: int
    b_stop: int
    out_dim: int
    in_dim: int


class ParamLayout:
    """Bijection between a network's parameters and a flat vector of length T."""

    def __init__(self, shapes):
        # shapes: list of (out, in) per layer
        self.slots = []
        pos = 0
        for out, inp in shapes:
            w0, w1 = pos, pos + out * inp
            b0, b1 = w1, w1 + out
            self.slots.append(LayerSlots(w0, w1, b0, b1, out, inp))
            pos = b1
        self.size = pos

    @classmethod
    def of(cls, net: Network) -> "ParamLayout":
        return cls([l.W.shape for l in net.layers])

    def layer_range(self, l: int) -> tuple[int, int]:
        """Flat index range [start, stop) covering layer l's weights and bias."""
        s = self.slots[l]
        return s.w_start, s.b_stop

    def locate(self, i: int):
        """Map flat index i to (layer, 'W', row, col) or (layer, 'b', index)."""
        for l, s in enumerate(self.slots):
            if s.w_start <= i < s.w_stop:
                off = i - s.w_start
                return (l, "W", off // s.in_dim, off % s.in_dim)
            if s.b_start <= i < s.b_stop:
                return (l, "b", i - s.b_start)
        raise IndexError(i)

    def unflatten(self, theta: np.ndarray) -> Network:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise DimensionError(f"expected flat vector of length {self.size}")
        layers = []
        for s in self.slots:
            W = theta[s.w_start : s.w_stop].reshape(s.out_dim, s.in_dim)
            b = theta[s.b_start : s.b_stop]
            layers.append(Layer(W.copy(), b.copy()))
        return Network(layers)

    def forward_batch_t(self, theta_t: "ad.Tensor", X: np.ndarray) -> "ad.Tensor":
        """Differentiable batch forward on a flat parameter tensor."""
        X = np.asarray(X, dtype=np.float64)
        h = ad.tensor(X)
        last = len(self.slots) - 1
        for l, s in enumerate(self.slots):
            W = theta_t[s.w_start : s.w_stop].reshape(s.out_dim, s.in_dim)
            b = theta_t[s.b_start : s.b_stop].reshape(1, s.out_dim)
            pre = h @ W.T
            if l == last:
                h = pre + b
            else:
                h = ad.relu(pre - b)
        return h


def flatten(net: Network) -> tuple[np.ndarray, ParamLayout]:
    layout = ParamLayout.of(net)
    theta = np.empty(layout.size)
    for layer, s in zip(net.layers, layout.slots):
        theta[s.w_start : s.w_stop] = layer.W.ravel()
        theta[s.b_start : s.b_stop] = layer.b
    return theta, layout


class GradientTape:
    """Record of one forward pass, able to emit gradients for all leaves."""

    def __init__(self, net: Network, x: np.ndarray):
        self._theta, self._layout = flatten(net)
        self._leaf = ad.tensor(self._theta)
        self._out = self._layout.forward_batch_t(
            self._leaf, np.asarray(x, dtype=np.float64)[None, :]
        )
        self._used = False

    @property
    def output(self) -> np.ndarray:
        return self._out.value[0].copy()

    def gradients(self, upstream) -> list[dict]:
        """d(upstream . output)/d(leaf) as per-layer {'W': ..., 'b': ...} dicts."""
        if self._used:
            raise RuntimeError("tape already consumed; record a new forward pass")
        self._used = True
        upstream = np.asarray(upstream, dtype=np.float64)
        self._out.backward(upstream[None, :])
        g = self._leaf.grad
        out = []
        for s in self._layout.slots:
            out.append(
                {
                    "W": g[s.w_start : s.w_stop].reshape(s.out_dim, s.in_dim),
                    "b": g[s.b_start : s.b_stop],
                }
            )
        return out


def forward_with_tape(net: Network, x) -> tuple[np.ndarray, GradientTape]:
    tape = GradientTape(net, x)
    return tape.output, tape


def backward(tape: GradientTape, upstream) -> list[dict]:
    return tape.gradients(upstream)
