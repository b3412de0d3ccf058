"""Quantization codebooks: GMM responsibilities, temperature-scaled
assignments, 1-D K-means initialization and outlier-aware window partitions.

A codebook holds K Gaussian components (mu, sigma, pi) plus the softmax
temperature tau.  For a weight value t the pipeline is:

    responsibilities:  r_k = softmax_k( pi_k * N(t | mu_k, sigma_k^2) )
    assignment:        a_k = softmax_k( r_k / tau )
    soft weight:       sum_k mu_k * a_k

The exponents pi_k * density are clamped to +-500 before the softmax so tiny
sigmas cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

EXP_CLAMP = 500.0
SIGMA_FLOOR = 1e-3
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class CodebookError(ValueError):
    pass


@dataclass
class GmmCodebook:
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray
    tau: float = 5e-4

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        self.pi = np.atleast_1d(np.asarray(self.pi, dtype=np.float64))
        if not (self.mu.shape == self.sigma.shape == self.pi.shape):
            raise CodebookError("mu/sigma/pi must have matching shapes")
        if self.K < 1:
            raise CodebookError("need at least one component")
        if np.any(self.sigma <= 0):
            raise CodebookError("sigma must be strictly positive")
        if abs(self.pi.sum() - 1.0) > 1e-9:
            raise CodebookError("pi must sum to 1")
        if self.tau <= 0:
            raise CodebookError("tau must be strictly positive")

    @property
    def K(self) -> int:
        return self.mu.shape[0]


def _gauss_density(theta, mu, sigma):
    z = (theta - mu) / sigma
    return _INV_SQRT_2PI / sigma * np.exp(-0.5 * z * z)


def _exponents(cb: GmmCodebook, theta: np.ndarray) -> np.ndarray:
    e = cb.pi * _gauss_density(theta[..., None], cb.mu, cb.sigma)
    if not np.all(np.isfinite(e)):
        raise FloatingPointError("non-finite mixture density")
    return np.clip(e, -EXP_CLAMP, EXP_CLAMP)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def responsibilities(cb: GmmCodebook, theta) -> np.ndarray:
    """Posterior component weights for one value or a vector of values."""
    theta = np.asarray(theta, dtype=np.float64)
    return _softmax(_exponents(cb, theta))


def assignment(cb: GmmCodebook, theta) -> np.ndarray:
    """Temperature-scaled softmax over the responsibilities."""
    return _softmax(responsibilities(cb, theta) / cb.tau)


def soft_weight(cb: GmmCodebook, theta):
    """Assignment-weighted mean of the component means."""
    return assignment(cb, theta) @ cb.mu


# -- differentiable path -------------------------------------------------


def assignment_t(theta_t, mu_t, sigma_t, pi_t, tau: float):
    """Differentiable assignment for a vector of weights (m,) x codebook (K,)."""
    m = theta_t.shape[0]
    K = mu_t.shape[0]
    diff = theta_t.reshape(m, 1) - mu_t.reshape(1, K)
    sig = sigma_t.reshape(1, K)
    dens = ad.exp(diff * diff * (-0.5) / (sig * sig)) * (_INV_SQRT_2PI / sig)
    expo = ad.clip(pi_t.reshape(1, K) * dens, -EXP_CLAMP, EXP_CLAMP)
    resp = ad.softmax(expo, axis=-1)
    return ad.softmax(resp * (1.0 / tau), axis=-1)


def soft_weight_t(theta_t, mu_t, sigma_t, pi_t, tau: float):
    phi = assignment_t(theta_t, mu_t, sigma_t, pi_t, tau)
    return (phi * mu_t.reshape(1, -1)).sum(axis=1), phi


# -- K-means initialization ----------------------------------------------


def _kmeans_1d(x: np.ndarray, K: int, rng: np.random.Generator, iters: int = 100):
    """Lloyd's algorithm with k-means++ seeding; ties go to the lower index."""
    centers = np.empty(K)
    centers[0] = x[rng.integers(len(x))]
    d2 = (x - centers[0]) ** 2
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            centers[k] = x[rng.integers(len(x))]
        else:
            centers[k] = rng.choice(x, p=d2 / total)
        d2 = np.minimum(d2, (x - centers[k]) ** 2)
    assign = np.zeros(len(x), dtype=np.intp)
    for _ in range(iters):
        new_assign = np.abs(x[:, None] - centers[None, :]).argmin(axis=1)
        if np.array_equal(new_assign, assign) and _ > 0:
            break
        assign = new_assign
        for k in range(K):
            members = x[assign == k]
            if len(members):
                centers[k] = members.mean()
    return centers, assign


def kmeans_init(
    weights,
    K: int,
    *,
    seed: int = 0,
    tau: float = 5e-4,
    sigma_floor: float = SIGMA_FLOOR,
) -> GmmCodebook:
    """Build a codebook from 1-D K-means groups of ``weights``.

    mu_k is the group mean, sigma_k the group sample std (floored for
    degenerate groups) and pi_k the group's share of the points.
    """
    x = np.asarray(weights, dtype=np.float64).ravel()
    if K < 1:
        raise CodebookError("K must be >= 1")
    if len(x) < K:
        raise CodebookError(f"need at least K={K} weights, got {len(x)}")
    rng = np.random.default_rng(seed)
    centers, assign = _kmeans_1d(x, K, rng)
    order = np.argsort(centers, kind="stable")
    mu = np.empty(K)
    sigma = np.empty(K)
    counts = np.empty(K)
    for slot, k in enumerate(order):
        members = x[assign == k]
        counts[slot] = len(members)
        if len(members) == 0:
            mu[slot] = centers[k]
            sigma[slot] = sigma_floor
        else:
            mu[slot] = members.mean()
            sigma[slot] = members.std(ddof=1) if len(members) > 1 else 0.0
            if not sigma[slot] > sigma_floor:
                sigma[slot] = sigma_floor
    pi = counts / counts.sum()
    # counts are integers, so force the float ratios to sum to exactly 1
    pi[np.argmax(pi)] += 1.0 - pi.sum()
    return GmmCodebook(mu, sigma, pi, tau)


# -- window partitions ---------------------------------------------------


@dataclass
class WindowPartition:
    """Four half-open windows over a layer's weight range, each with its own
    codebook.  Windows holding fewer than K points collapse into the nearest
    live neighbor; ``redirect`` maps nominal window index to the live one."""

    boundaries: np.ndarray  # 3 cut points, or empty for single-window fallback
    codebooks: list  # one GmmCodebook per live window, indexed by live id
    redirect: np.ndarray  # nominal window -> live codebook id
    strategy: str
    fallback: bool = False
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_live(self) -> int:
        return len(self.codebooks)

    @property
    def total_components(self) -> int:
        return sum(cb.K for cb in self.codebooks)

    def window_of(self, values) -> np.ndarray:
        """Live codebook id for each value."""
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if len(self.boundaries) == 0:
            return np.zeros(len(values), dtype=np.intp)
        nominal = np.searchsorted(self.boundaries, values, side="right")
        return self.redirect[nominal]

    def codebook_offsets(self) -> np.ndarray:
        """Start offset of each live codebook in the layer's merged value table."""
        sizes = [cb.K for cb in self.codebooks]
        return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)

    def merged_mu(self) -> np.ndarray:
        return np.concatenate([cb.mu for cb in self.codebooks])


def _nominal_windows(x: np.ndarray, strategy: str, iqr_multiplier: float):
    lo, hi = x.min(), x.max()
    if strategy == "equal":
        step = (hi - lo) / 4.0
        cuts = np.array([lo + step, lo + 2 * step, lo + 3 * step])
    elif strategy == "outlier":
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])  # linear interpolation
        iqr = q3 - q1
        cuts = np.array([q1 - iqr_multiplier * iqr, med, q3 + iqr_multiplier * iqr])
    else:
        raise CodebookError(f"unknown window strategy {strategy!r}")
    return cuts


def partition_windows(
    weights,
    strategy: str = "outlier",
    *,
    K: int = 16,
    tau: float = 5e-4,
    iqr_multiplier: float = 5.0,
    seed: int = 0,
    sigma_floor: float = SIGMA_FLOOR,
) -> WindowPartition:
    x = np.asarray(weights, dtype=np.float64).ravel()
    if len(x) < 8:
        cb = kmeans_init(x, min(K, len(x)), seed=seed, tau=tau, sigma_floor=sigma_floor)
        return WindowPartition(
            boundaries=np.zeros(0),
            codebooks=[cb],
            redirect=np.zeros(1, dtype=np.intp),
            strategy=strategy,
            fallback=True,
            counts=np.array([len(x)]),
        )
    cuts = _nominal_windows(x, strategy, iqr_multiplier)
    nominal = np.searchsorted(cuts, x, side="right")
    counts = np.bincount(nominal, minlength=4)
    live_nominal = [w for w in range(4) if counts[w] >= K]
    if not live_nominal:
        # not enough mass in any window for a K-way codebook
        cb = kmeans_init(x, min(K, len(x)), seed=seed, tau=tau, sigma_floor=sigma_floor)
        return WindowPartition(
            boundaries=np.zeros(0),
            codebooks=[cb],
            redirect=np.zeros(1, dtype=np.intp),
            strategy=strategy,
            fallback=True,
            counts=np.array([len(x)]),
        )
    redirect = np.empty(4, dtype=np.intp)
    for w in range(4):
        # nearest live window; ties to the lower index
        best = min(live_nominal, key=lambda lw: (abs(lw - w), lw))
        redirect[w] = live_nominal.index(best)
    codebooks = []
    for live_id, w in enumerate(live_nominal):
        members = x[redirect[nominal] == live_id]
        codebooks.append(
            kmeans_init(members, K, seed=seed + w, tau=tau, sigma_floor=sigma_floor)
        )
    return WindowPartition(
        boundaries=cuts,
        codebooks=codebooks,
        redirect=redirect,
        strategy=strategy,
        counts=counts,
    )
