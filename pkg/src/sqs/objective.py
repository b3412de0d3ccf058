"""Training objectives for joint pruning and quantization.

The loss has three parts: a data term evaluated at the effective (soft)
weights ``lambda_i * sum_k mu_k a_k(theta_i)``, a Bernoulli KL pulling each
retain probability toward the prior rate, and a slab KL between the dominant
Gaussian component of each weight and the zero-mean slab prior.  A variant
objective replaces the spike-and-slab terms with the mixture-KL upper bound
against a plain Gaussian prior (no Bernoulli term).

Gradients for every leaf (theta, s, mu, sigma, pi) come from the autodiff
graph; the argmax picking the dominant component is treated as piecewise
constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .codebook import (
    GmmCodebook,
    WindowPartition,
    assignment,
    partition_windows,
    soft_weight_t,
)
from .network import Network, ParamLayout, flatten


class ConfigError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


# -- closed-form pieces ---------------------------------------------------


def retain_prob(s, tau_prime: float):
    """Sigmoid-reparameterized retain probability."""
    if tau_prime <= 0:
        raise ConfigError("tau_prime must be positive")
    z = np.asarray(s, dtype=np.float64) / tau_prime
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def _xlogx(p, q):
    """p * log(p/q) with the 0 log 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz] / q)
    return out


def bern_kl(lt, l: float):
    """KL between Bernoulli(lt) and Bernoulli(l)."""
    if not 0.0 < l < 1.0:
        raise ConfigError("prior retain rate must lie strictly inside (0, 1)")
    lt_arr = np.asarray(lt, dtype=np.float64)
    if np.any((lt_arr < 0) | (lt_arr > 1)):
        raise ValueError("retain probability outside [0, 1]")
    out = _xlogx(lt_arr, l) + _xlogx(1.0 - lt_arr, 1.0 - l)
    return out if out.ndim else float(out)


def gauss_kl(mu, var, var0):
    """KL between N(mu, var) and N(0, var0)."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0) or var0 <= 0:
        raise ValueError("variances must be strictly positive")
    out = 0.5 * (np.log(var0 / var) + (var + mu * mu) / var0 - 1.0)
    return out if out.ndim else float(out)


def _bern_kl_t(lam_t, l: float):
    lam_c = ad.clip(lam_t, 1e-15, 1.0 - 1e-15)
    return lam_c * ad.log(lam_c * (1.0 / l)) + (1.0 - lam_c) * ad.log(
        (1.0 - lam_c) * (1.0 / (1.0 - l))
    )


def _gauss_kl_t(mu_t, var_t, var0: float):
    return ((ad.log(var_t * (1.0 / var0)) * -1.0) + (var_t + mu_t * mu_t) * (1.0 / var0) - 1.0) * 0.5


@dataclass
class ObjectiveBreakdown:
    nll: float
    bern_kl: float
    slab_kl: float

    @property
    def total(self) -> float:
        return self.nll + self.bern_kl + self.slab_kl


# -- variational model bundle --------------------------------------------


@dataclass
class Group:
    """One live window of one layer: its weight indices and learnable codebook."""

    layer: int
    live_id: int
    indices: np.ndarray  # flat theta indices
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray


class VariationalModel:
    """Learnable state: flat weights theta, retain logits s, and per-window
    codebooks.  Window membership is fixed at initialization time."""

    def __init__(self, layout: ParamLayout, theta, s, partitions, groups):
        self.layout = layout
        self.theta = np.asarray(theta, dtype=np.float64)
        self.s = np.asarray(s, dtype=np.float64)
        self.partitions: list[WindowPartition] = partitions
        self.groups: list[Group] = groups

    @property
    def T(self) -> int:
        return self.layout.size

    @classmethod
    def initialize(
        cls,
        net: Network,
        *,
        K: int = 16,
        tau: float = 5e-4,
        window_strategy: str = "outlier",
        iqr_multiplier: float = 5.0,
        seed: int = 0,
        s0: float | None = None,
        tau_prime: float = 0.0125,
    ) -> "VariationalModel":
        theta, layout = flatten(net)
        if s0 is None:
            # start nearly dense: retain probability 0.99 everywhere
            s0 = tau_prime * np.log(0.99 / 0.01)
        s = np.full(layout.size, s0)
        partitions = []
        groups = []
        for l in range(len(layout.slots)):
            start, stop = layout.layer_range(l)
            segment = theta[start:stop]
            part = partition_windows(
                segment,
                window_strategy,
                K=K,
                tau=tau,
                iqr_multiplier=iqr_multiplier,
                seed=seed + 1000 * l,
            )
            partitions.append(part)
            wins = part.window_of(segment)
            for live_id, cb in enumerate(part.codebooks):
                idx = start + np.flatnonzero(wins == live_id)
                groups.append(
                    Group(l, live_id, idx, cb.mu.copy(), cb.sigma.copy(), cb.pi.copy())
                )
        return cls(layout, theta, s, partitions, groups)

    def codebook(self, g: Group, tau: float) -> GmmCodebook:
        pi = np.clip(g.pi, 0.0, None)
        pi = pi / pi.sum()
        return GmmCodebook(g.mu.copy(), g.sigma.copy(), pi, tau)

    def soft_weights(self, tau: float):
        """Numpy path: per-weight slab mean and assignment rows.

        Returns (soft (T,), phis: list aligned with groups).
        """
        soft = np.empty(self.T)
        phis = []
        for g in self.groups:
            phi = assignment(self.codebook(g, tau), self.theta[g.indices])
            phis.append(phi)
            soft[g.indices] = phi @ g.mu
        return soft, phis


# -- the objectives -------------------------------------------------------


def objective(
    model: VariationalModel,
    batch,
    task: str,
    *,
    lambda_prior: float,
    sigma0_sq: float,
    tau: float,
    tau_prime: float,
    sigma_eps: float = 1.0,
    scale: float = 1.0,
    mask=None,
    prior: str = "spike_slab",
):
    """Evaluate the training loss and gradients on one batch.

    ``prior`` selects the spike-and-slab objective or the Gaussian-prior
    ablation variant.  ``scale`` rescales the data term to full-dataset units
    when ``batch`` is a subsample.  ``mask`` (0/1 per weight) hard-zeroes
    scheduled weights in the effective parameter vector.

    Returns (ObjectiveBreakdown, grads) where grads holds 'theta', 's' and
    per-group 'mu', 'sigma', 'pi' arrays.
    """
    if task not in ("regression", "classification"):
        raise ConfigError(f"unknown task {task!r}")
    if prior not in ("spike_slab", "gaussian"):
        raise ConfigError(f"unknown prior {prior!r}")
    if not 0.0 < lambda_prior < 1.0:
        raise ConfigError("lambda_prior must lie strictly inside (0, 1)")
    if sigma0_sq <= 0:
        raise ConfigError("sigma0_sq must be positive")
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")

    theta_t = ad.tensor(model.theta)
    s_t = ad.tensor(model.s)
    leaves = []
    lam_t = ad.sigmoid(s_t * (1.0 / tau_prime))

    soft_parts = []
    index_parts = []
    slab_terms = []
    for g in model.groups:
        mu_t = ad.tensor(g.mu)
        sig_t = ad.tensor(g.sigma)
        pi_t = ad.tensor(g.pi)
        leaves.append((mu_t, sig_t, pi_t))
        th = theta_t[g.indices]
        soft, phi = soft_weight_t(th, mu_t, sig_t, pi_t, tau)
        soft_parts.append(soft)
        index_parts.append(g.indices)
        lam_g = lam_t[g.indices]
        if prior == "spike_slab":
            kstar = np.argmax(phi.value, axis=1)
            mu_sel = mu_t[kstar]
            var_sel = sig_t[kstar] ** 2
            term = (lam_g * _gauss_kl_t(mu_sel, var_sel, sigma0_sq)).sum()
        else:
            comp_kl = _gauss_kl_t(mu_t, sig_t**2, sigma0_sq)
            term = (lam_g * (phi * comp_kl.reshape(1, -1)).sum(axis=1)).sum()
        slab_terms.append(term)

    perm = np.concatenate(index_parts)
    inv = np.argsort(perm, kind="stable")
    eff = ad.concat(soft_parts)[inv] * lam_t
    if mask is not None:
        eff = eff * np.asarray(mask, dtype=np.float64)

    pred = model.layout.forward_batch_t(eff, X)
    if task == "regression":
        yy = np.asarray(y, dtype=np.float64).reshape(pred.shape)
        resid = pred - yy
        const = yy.size * 0.5 * np.log(2.0 * np.pi * sigma_eps**2)
        nll_t = (resid * resid).sum() * (0.5 / sigma_eps**2) * scale + const * scale
    else:
        labels = np.asarray(y).astype(np.intp).ravel()
        onehot = np.zeros(pred.shape)
        onehot[np.arange(len(labels)), labels] = 1.0
        nll_t = (ad.logsumexp(pred, axis=1).sum() - (pred * onehot).sum()) * scale

    if prior == "spike_slab":
        bern_t = _bern_kl_t(lam_t, lambda_prior).sum()
    else:
        bern_t = ad.tensor(0.0)
    slab_t = slab_terms[0]
    for t in slab_terms[1:]:
        slab_t = slab_t + t
    total_t = nll_t + bern_t + slab_t

    breakdown = ObjectiveBreakdown(
        float(nll_t.value), float(bern_t.value), float(slab_t.value)
    )
    for name, v in (("nll", breakdown.nll), ("bern_kl", breakdown.bern_kl),
                    ("slab_kl", breakdown.slab_kl)):
        if not np.isfinite(v):
            raise NumericError(f"non-finite objective term: {name}")

    total_t.backward()
    grads = {
        "theta": theta_t.grad if theta_t.grad is not None else np.zeros(model.T),
        "s": s_t.grad if s_t.grad is not None else np.zeros(model.T),
        "mu": [],
        "sigma": [],
        "pi": [],
    }
    for mu_t, sig_t, pi_t in leaves:
        grads["mu"].append(mu_t.grad if mu_t.grad is not None else np.zeros(mu_t.shape))
        grads["sigma"].append(sig_t.grad if sig_t.grad is not None else np.zeros(sig_t.shape))
        grads["pi"].append(pi_t.grad if pi_t.grad is not None else np.zeros(pi_t.shape))
    return breakdown, grads


def objective_gaussian_prior(model, batch, task, **kw):
    """Ablation objective with a zero-mean Gaussian prior on the slab."""
    kw["prior"] = "gaussian"
    return objective(model, batch, task, **kw)
