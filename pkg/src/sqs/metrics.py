"""Evaluation and verification: compression accounting, Monte-Carlo KL
oracle, mixture-KL upper bound, finite-difference gradient checker and
histogram export."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import (
    bitmap_payload_bytes,
    compressed_size_bytes,
    dense_size_bytes,
    index_payload_bytes,
)
from .inference import CompressedModel
from .objective import gauss_kl


def compression_rate(bits: float, nonzero: float) -> float:
    """Memory ratio of a 32-bit dense model over the compressed one."""
    if bits <= 0:
        raise ValueError("bits must be positive")
    if not 0.0 < nonzero <= 1.0:
        raise ValueError("nonzero must lie in (0, 1]")
    return (32.0 / bits) * (1.0 / nonzero)


def accuracy_drop(base_metric: float, compressed_metric: float) -> float:
    return base_metric - compressed_metric


@dataclass
class LayerReport:
    live_components: int
    effective_bits: float
    nominal_bits: float
    live_weights: int
    total_weights: int


@dataclass
class CompressionReport:
    bits: float  # nominal convention, log2 K
    effective_bits: float  # log2 of the live union codebook, weight-averaged
    nonzero: float
    compression_rate: float
    effective_compression_rate: float
    dense_bytes: int
    compressed_bytes: int
    index_payload_bytes: int
    bitmap_bytes: int
    measured_rate: float  # dense over full encoded payload
    measured_rate_nominal: float  # dense over index stream + codebook only
    per_layer: list = field(default_factory=list)


def build_report(m: CompressedModel) -> CompressionReport:
    per_layer = []
    for (out, inp), cl in zip(m.shapes, m.layers):
        T_l = out * inp + out
        per_layer.append(
            LayerReport(
                live_components=cl.C,
                effective_bits=float(np.log2(cl.C)) if cl.C > 1 else 0.0,
                nominal_bits=float(np.log2(m.K)) if m.K > 1 else 0.0,
                live_weights=int(cl.keep.sum()),
                total_weights=T_l,
            )
        )
    T = m.T
    live = sum(l.live_weights for l in per_layer)
    eff_bits = (
        sum(l.effective_bits * l.live_weights for l in per_layer) / live if live else 0.0
    )
    nominal_bits = float(np.log2(m.K)) if m.K > 1 else 1.0
    dense = dense_size_bytes(T)
    full = compressed_size_bytes(m, include_header=False)
    idx_bytes = index_payload_bytes(m)
    return CompressionReport(
        bits=nominal_bits,
        effective_bits=eff_bits,
        nonzero=m.nonzero,
        compression_rate=compression_rate(nominal_bits, m.nonzero),
        effective_compression_rate=compression_rate(max(eff_bits, 1e-12), m.nonzero),
        dense_bytes=dense,
        compressed_bytes=full,
        index_payload_bytes=idx_bytes,
        bitmap_bytes=bitmap_payload_bytes(m),
        measured_rate=dense / full,
        measured_rate_nominal=dense / idx_bytes if idx_bytes else float("inf"),
        per_layer=per_layer,
    )


# -- mixtures and KL oracles ----------------------------------------------


@dataclass
class Mixture:
    """Finite 1-D Gaussian mixture."""

    w: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if not (self.w.shape == self.mu.shape == self.sigma.shape):
            raise ValueError("mixture arrays must have matching shapes")
        if abs(self.w.sum() - 1.0) > 1e-9 or np.any(self.w < 0):
            raise ValueError("weights must lie on the simplex")
        if np.any(self.sigma <= 0):
            raise ValueError("component stds must be positive")

    @property
    def K(self) -> int:
        return len(self.w)

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = (x[..., None] - self.mu) / self.sigma
        comp = -0.5 * z * z - np.log(self.sigma) - 0.5 * np.log(2.0 * np.pi)
        lw = np.where(self.w > 0, np.log(np.maximum(self.w, 1e-300)), -np.inf)
        a = comp + lw
        m = a.max(axis=-1)
        return m + np.log(np.exp(a - m[..., None]).sum(axis=-1))


def _stratified_counts(w: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder allocation of n samples proportional to w."""
    raw = w * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def mc_kl(p: Mixture, q: Mixture, n_samples: int, rng: np.random.Generator):
    """Monte-Carlo estimate of KL(p || q) with stratified component sampling.

    Returns (estimate, standard_error); unbiased for the true divergence.
    """
    counts = _stratified_counts(p.w, n_samples)
    # per-stratum means/vars combine into the estimator and its SE
    est = 0.0
    var = 0.0
    for k, nk in enumerate(counts):
        if nk == 0:
            continue
        x = rng.normal(p.mu[k], p.sigma[k], size=nk)
        ratio = p.logpdf(x) - q.logpdf(x)
        est += p.w[k] * ratio.mean()
        if nk > 1:
            var += (p.w[k] ** 2) * ratio.var(ddof=1) / nk
    return est, float(np.sqrt(var))


def mixture_kl_bound(p: Mixture, q: Mixture) -> float:
    """Component-matched upper bound on KL(p || q) for equal-length mixtures:
    sum_k w_k KL(g_k || g~_k) + sum_k w_k log(w_k / w~_k)."""
    if p.K != q.K:
        raise ValueError("mixtures must have matching component counts")
    total = 0.0
    for k in range(p.K):
        if p.w[k] == 0:
            continue
        if q.w[k] == 0:
            return float("inf")
        # closed-form Gaussian KL via the zero-mean form on shifted means
        total += p.w[k] * gauss_kl(
            p.mu[k] - q.mu[k], p.sigma[k] ** 2, q.sigma[k] ** 2
        )
        total += p.w[k] * np.log(p.w[k] / q.w[k])
    return float(total)


# -- histograms -----------------------------------------------------------


def export_histogram(values, bins: int = 100, range_=None):
    """Equal-width histogram rows (bin_left, bin_right, count)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("empty input")
    counts, edges = np.histogram(values, bins=bins, range=range_)
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i]))
        for i in range(len(counts))
    ]


def write_histogram_csv(path, rows):
    with open(path, "w") as f:
        f.write("bin_left,bin_right,count\n")
        for left, right, count in rows:
            f.write(f"{left!r},{right!r},{count}\n")


def histogram_tv(a, b, bins: int = 100) -> float:
    """Total variation distance between the binned distributions of two
    samples, on the union range."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    ca, _ = np.histogram(a, bins=bins, range=(lo, hi))
    cb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    pa = ca / ca.sum()
    pb = cb / cb.sum()
    return float(0.5 * np.abs(pa - pb).sum())


# -- gradient checking ----------------------------------------------------


def fd_check(closure, params: dict, h: float = 1e-4) -> float:
    """Max relative error of analytic gradients against central differences.

    ``closure(params) -> (value, grads)`` where grads mirrors params.
    """
    _, grads = closure(params)
    worst = 0.0
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        flat = p.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp, _ = closure(params)
            flat[i] = orig - h
            fm, _ = closure(params)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite evaluation in fd_check")
            fd = (fp - fm) / (2.0 * h)
            ga = g.ravel()[i]
            scale = max(abs(fd), abs(ga))
            if scale < 1e-6:
                err = abs(fd - ga)  # absolute error near zero
            else:
                err = abs(fd - ga) / scale
            worst = max(worst, err)
    return worst
