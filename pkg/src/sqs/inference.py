"""From learned variational parameters to a deployable compressed model.

Pruning is deterministic (quantile rule on the retain probabilities, exact
count, ties resolved by flat index).  Quantization is either stochastic
(categorical draw from each weight's assignment row, used by Bayesian
averaging) or greedy (argmax component mean, the canonical stored code).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codebook import WindowPartition, assignment
from .network import Network, ParamLayout
from .objective import VariationalModel, retain_prob


class UnsupportedModel(ValueError):
    pass


@dataclass
class SnapshotGroup:
    layer: int
    live_id: int
    indices: np.ndarray  # flat theta indices
    mu: np.ndarray
    sigma: np.ndarray
    phi: np.ndarray  # (m, K) assignment rows


@dataclass
class PosteriorSnapshot:
    layout: ParamLayout
    lambda_hat: np.ndarray
    partitions: list
    groups: list
    tau: float

    @property
    def T(self) -> int:
        return self.layout.size


def snapshot(model: VariationalModel, *, tau: float, tau_prime: float) -> PosteriorSnapshot:
    """Freeze the learned parameters into per-weight posterior quantities."""
    lam = retain_prob(model.s, tau_prime)
    groups = []
    for g in model.groups:
        cb = model.codebook(g, tau)
        phi = assignment(cb, model.theta[g.indices])
        groups.append(SnapshotGroup(g.layer, g.live_id, g.indices, cb.mu, cb.sigma, phi))
    return PosteriorSnapshot(model.layout, lam, model.partitions, groups, tau)


# -- pruning --------------------------------------------------------------


def prune_count(T: int, nonzero: float) -> int:
    if not 0.0 < nonzero <= 1.0:
        raise ValueError("nonzero must lie in (0, 1]")
    return int(math.ceil((1.0 - nonzero) * T - 1e-9))


def keep_mask(lam, nonzero: float) -> np.ndarray:
    """Boolean keep mask pruning exactly ceil((1-nonzero)*T) weights.

    Ties on the quantile boundary are broken by pruning lower flat indices
    first (stable ascending sort).
    """
    lam = np.asarray(lam, dtype=np.float64)
    n_prune = prune_count(lam.size, nonzero)
    keep = np.ones(lam.size, dtype=bool)
    if n_prune:
        order = np.argsort(lam, kind="stable")
        keep[order[:n_prune]] = False
    return keep


def prune(snap: PosteriorSnapshot, nonzero: float) -> np.ndarray:
    return keep_mask(snap.lambda_hat, nonzero)


# -- quantization ---------------------------------------------------------


def sample_quantized(snap: PosteriorSnapshot, rng: np.random.Generator, keep=None) -> np.ndarray:
    """Draw one quantized flat parameter vector from the posterior."""
    theta = np.zeros(snap.T)
    for g in snap.groups:
        cum = np.cumsum(g.phi, axis=1)
        u = rng.random(len(g.indices))
        k = np.argmax(u[:, None] < cum, axis=1)
        theta[g.indices] = g.mu[k]
    if keep is not None:
        theta[~np.asarray(keep, dtype=bool)] = 0.0
    return theta


def greedy_quantize(snap: PosteriorSnapshot, keep=None) -> np.ndarray:
    """Deterministic quantization to each weight's argmax component mean."""
    theta = np.zeros(snap.T)
    for g in snap.groups:
        k = np.argmax(g.phi, axis=1)  # ties to the lowest index
        theta[g.indices] = g.mu[k]
    if keep is not None:
        theta[~np.asarray(keep, dtype=bool)] = 0.0
    return theta


def predict_greedy(snap: PosteriorSnapshot, X, keep=None) -> np.ndarray:
    net = snap.layout.unflatten(greedy_quantize(snap, keep))
    return net.forward_batch(np.atleast_2d(X))


def predict_bayes(snap: PosteriorSnapshot, X, M: int, rng: np.random.Generator, keep=None) -> np.ndarray:
    """Average of M forward passes over independently sampled quantized nets.

    The keep mask is fixed across draws; only the component draws vary.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    X = np.atleast_2d(X)
    acc = None
    for _ in range(M):
        net = snap.layout.unflatten(sample_quantized(snap, rng, keep))
        out = net.forward_batch(X)
        acc = out if acc is None else acc + out
    return acc / M


# -- the compact artifact -------------------------------------------------


@dataclass
class CompressedLayer:
    boundaries: np.ndarray
    redirect: np.ndarray
    strategy: str
    window_K: list  # live codebook sizes, in live-id order
    mu: np.ndarray  # merged codebook means, float32, length C
    indices: np.ndarray  # one entry per live weight, flat-index order
    keep: np.ndarray  # bool, one per weight of this layer

    @property
    def C(self) -> int:
        return len(self.mu)

    @property
    def index_bits(self) -> int:
        return max(int(math.ceil(math.log2(self.C))), 0) if self.C > 1 else 0


@dataclass
class CompressedModel:
    shapes: list  # (out, in) per layer
    layers: list
    K: int
    nonzero: float
    seed: int = 0

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(self.shapes)

    @property
    def T(self) -> int:
        return self.layout.size

    def to_theta(self) -> np.ndarray:
        layout = self.layout
        theta = np.zeros(layout.size)
        for l, cl in enumerate(self.layers):
            start, stop = layout.layer_range(l)
            seg = np.zeros(stop - start)
            seg[cl.keep] = cl.mu.astype(np.float64)[cl.indices]
            theta[start:stop] = seg
        return theta

    def to_network(self) -> Network:
        return self.layout.unflatten(self.to_theta())

    def predict(self, X) -> np.ndarray:
        return self.to_network().forward_batch(np.atleast_2d(X))


def finalize(snap: PosteriorSnapshot, nonzero: float, *, K: int = 0, seed: int = 0) -> CompressedModel:
    """Prune, greedily quantize and pack the snapshot into the compact model.

    The stored code is the greedy component index per live weight; Bayesian
    averaging needs the retained snapshot (the compact file has no phi rows).
    """
    keep = prune(snap, nonzero)
    layout = snap.layout
    shapes = [(s.out_dim, s.in_dim) for s in layout.slots]
    n_layers = len(shapes)
    # per-layer scatter of greedy global indices
    layer_groups = [[] for _ in range(n_layers)]
    for g in snap.groups:
        layer_groups[g.layer].append(g)
    layers = []
    for l in range(n_layers):
        start, stop = layout.layer_range(l)
        part: WindowPartition = snap.partitions[l]
        sizes = [len(g.mu) for g in sorted(layer_groups[l], key=lambda g: g.live_id)]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
        C = int(sum(sizes))
        if C > 1 << 16:
            raise UnsupportedModel(f"codebook of {C} entries exceeds 2^16")
        mu_merged = np.concatenate(
            [g.mu for g in sorted(layer_groups[l], key=lambda g: g.live_id)]
        ).astype(np.float32)
        code = np.zeros(stop - start, dtype=np.int64)
        for g in sorted(layer_groups[l], key=lambda g: g.live_id):
            k = np.argmax(g.phi, axis=1)
            code[g.indices - start] = offsets[g.live_id] + k
        lkeep = keep[start:stop]
        layers.append(
            CompressedLayer(
                boundaries=part.boundaries.copy(),
                redirect=np.asarray(part.redirect, dtype=np.int64),
                strategy=part.strategy,
                window_K=sizes,
                mu=mu_merged,
                indices=code[lkeep],
                keep=lkeep.copy(),
            )
        )
    return CompressedModel(shapes, layers, K=K, nonzero=nonzero, seed=seed)
