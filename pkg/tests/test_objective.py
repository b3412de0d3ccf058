"""Closed-form KL pieces and the full training objectives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqs.network import Network
from sqs.objective import (
    ConfigError,
    VariationalModel,
    bern_kl,
    gauss_kl,
    objective,
    objective_gaussian_prior,
    retain_prob,
)
from sqs.trainer import init_mlp


# -- retain_prob ----------------------------------------------------------


def test_retain_prob_examples():
    assert retain_prob(0.0, 0.5) == 0.5
    np.testing.assert_allclose(retain_prob(0.5 * np.log(3.0), 0.5), 0.75, atol=1e-12)
    assert retain_prob(26.0, 1.0) > 1.0 - 1e-9
    assert retain_prob(-26.0, 1.0) < 1e-9


def test_retain_prob_monotone_and_vectorized():
    s = np.linspace(-3, 3, 50)
    lam = retain_prob(s, 0.7)
    assert np.all(np.diff(lam) > 0)
    assert np.all((lam > 0) & (lam < 1))


def test_retain_prob_rejects_bad_temperature():
    with pytest.raises(ConfigError):
        retain_prob(0.0, 0.0)


# -- bern_kl --------------------------------------------------------------


def test_bern_kl_examples():
    assert bern_kl(0.5, 0.5) == 0.0
    np.testing.assert_allclose(bern_kl(1.0, 0.5), np.log(2.0), atol=1e-12)
    expected = 0.9 * np.log(9.0) + 0.1 * np.log(1.0 / 9.0)
    np.testing.assert_allclose(expected, 1.7578, atol=1e-4)
    np.testing.assert_allclose(bern_kl(0.9, 0.1), expected, atol=1e-12)


def test_bern_kl_zero_cases_and_nonneg():
    np.testing.assert_allclose(bern_kl(0.0, 0.3), -np.log(0.7), atol=1e-15)  # 0*log0
    for lt in np.linspace(0, 1, 21):
        for l in (0.1, 0.5, 0.9):
            v = bern_kl(float(lt), l)
            assert v >= 0
            if abs(lt - l) < 1e-15:
                assert v == 0.0


def test_bern_kl_rejects_degenerate_prior():
    with pytest.raises(ConfigError):
        bern_kl(0.5, 0.0)
    with pytest.raises(ConfigError):
        bern_kl(0.5, 1.0)


# -- gauss_kl -------------------------------------------------------------


def test_gauss_kl_examples():
    assert gauss_kl(0.0, 2.0, 2.0) == 0.0
    np.testing.assert_allclose(gauss_kl(1.0, 1.0, 1.0), 0.5, atol=1e-12)
    expected = 0.5 * (np.log(4.0) + 0.25 - 1.0)
    np.testing.assert_allclose(expected, 0.318147, atol=5e-7)
    np.testing.assert_allclose(gauss_kl(0.0, 1.0, 4.0), expected, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 10), st.floats(0.01, 10))
def test_gauss_kl_nonnegative(mu, var, var0):
    assert gauss_kl(mu, var, var0) >= -1e-12


def test_gauss_kl_rejects_bad_variance():
    with pytest.raises(ValueError):
        gauss_kl(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        gauss_kl(0.0, 1.0, -1.0)


# -- full objective -------------------------------------------------------


def _scalar_model(theta0: float, s0: float, mu, sigma, pi, tau=0.5):
    """One-weight network (W=[[theta0]], b absorbed into a second weight)."""
    net = Network([(np.array([[theta0]]), np.array([0.0]))])
    model = VariationalModel.initialize(net, K=len(mu), tau=tau, seed=0, s0=s0)
    # overwrite the kmeans-initialized codebook with the hand-chosen one
    g = model.groups[0]
    g.mu = np.asarray(mu, dtype=np.float64)
    g.sigma = np.asarray(sigma, dtype=np.float64)
    g.pi = np.asarray(pi, dtype=np.float64)
    model.theta[0] = theta0
    return model


def test_objective_breakdown_sums():
    net = init_mlp(2, (3,), 1, seed=0)
    model = VariationalModel.initialize(net, K=2, tau=0.5, seed=1)
    rng = np.random.default_rng(0)
    bd, _ = objective(
        model, (rng.uniform(0, 1, (4, 2)), rng.normal(0, 1, 4)), "regression",
        lambda_prior=0.5, sigma0_sq=1.0, tau=0.5, tau_prime=0.7, sigma_eps=0.5,
    )
    np.testing.assert_allclose(bd.total, bd.nll + bd.bern_kl + bd.slab_kl, atol=1e-12)
    assert np.isfinite(bd.total)


def test_objective_kl_zero_cases():
    """lambda matching the prior and codebook matching the slab prior zero
    both KL terms, leaving only the data term."""
    tau_prime = 0.7
    lam = 0.4
    s0 = tau_prime * np.log(lam / (1 - lam))
    model = _scalar_model(0.0, s0, mu=[0.0, 0.0], sigma=[1.0, 1.0], pi=[0.5, 0.5])
    bd, _ = objective(
        model, (np.array([[2.0]]), np.array([1.0])), "regression",
        lambda_prior=lam, sigma0_sq=1.0, tau=0.5, tau_prime=tau_prime, sigma_eps=1.0,
    )
    np.testing.assert_allclose(bd.bern_kl, 0.0, atol=1e-9)
    np.testing.assert_allclose(bd.slab_kl, 0.0, atol=1e-9)
    np.testing.assert_allclose(bd.total, bd.nll, atol=1e-9)


def test_objective_full_spike_predicts_zero():
    model = _scalar_model(1.0, -50.0, mu=[1.0, 2.0], sigma=[1.0, 1.0], pi=[0.5, 0.5])
    X = np.array([[3.0]])
    y = np.array([2.0])
    bd, _ = objective(
        model, (X, y), "regression",
        lambda_prior=0.5, sigma0_sq=1.0, tau=0.5, tau_prime=0.0125, sigma_eps=1.0,
    )
    # effective weight ~ 0, so the NLL is that of predicting 0
    const = 0.5 * np.log(2 * np.pi)
    np.testing.assert_allclose(bd.nll, 0.5 * y[0] ** 2 + const, atol=1e-6)


def _hand_phi(theta, mu, sigma, pi, tau):
    """Responsibilities then temperature-scaled assignment, row per theta."""
    theta = np.atleast_1d(theta)
    dens = pi * np.exp(-0.5 * ((theta[:, None] - mu) / sigma) ** 2) / (
        np.sqrt(2 * np.pi) * sigma
    )
    resp = np.exp(dens - dens.max(axis=1, keepdims=True))
    resp /= resp.sum(axis=1, keepdims=True)
    phi = np.exp(resp / tau - (resp / tau).max(axis=1, keepdims=True))
    phi /= phi.sum(axis=1, keepdims=True)
    return phi


def test_objective_scalar_hand_computation():
    """One-weight net (weight + output bias), one data point: the breakdown
    must match a from-scratch evaluation of the three closed forms."""
    tau, tau_prime = 0.5, 0.7
    s0, theta0 = 0.3, 0.8
    mu = np.array([0.5, 1.5])
    sigma = np.array([0.6, 0.9])
    pi = np.array([0.4, 0.6])
    model = _scalar_model(theta0, s0, mu, sigma, pi, tau=tau)
    X, y = np.array([[2.0]]), np.array([1.0])
    sigma_eps, lam_prior, var0 = 0.5, 0.3, 2.0
    bd, _ = objective(
        model, (X, y), "regression",
        lambda_prior=lam_prior, sigma0_sq=var0, tau=tau,
        tau_prime=tau_prime, sigma_eps=sigma_eps,
    )

    theta = np.array([theta0, 0.0])  # flat layout: weight, then bias
    phi = _hand_phi(theta, mu, sigma, pi, tau)
    lam = 1 / (1 + np.exp(-s0 / tau_prime))
    eff = lam * (phi @ mu)
    pred = eff[0] * X[0, 0] + eff[1]
    nll = 0.5 * (pred - y[0]) ** 2 / sigma_eps**2 + 0.5 * np.log(2 * np.pi * sigma_eps**2)
    kstar = phi.argmax(axis=1)
    slab = (lam * gauss_kl(mu[kstar], sigma[kstar] ** 2, var0)).sum()
    np.testing.assert_allclose(bd.nll, nll, atol=1e-10)
    np.testing.assert_allclose(bd.bern_kl, 2 * bern_kl(lam, lam_prior), atol=1e-10)
    np.testing.assert_allclose(bd.slab_kl, slab, atol=1e-10)


def test_gaussian_prior_variant():
    tau = 0.5
    model = _scalar_model(0.8, 0.3, mu=[0.5, 1.5], sigma=[0.6, 0.9], pi=[0.4, 0.6], tau=tau)
    X, y = np.array([[2.0]]), np.array([1.0])
    bd, _ = objective_gaussian_prior(
        model, (X, y), "regression",
        lambda_prior=0.3, sigma0_sq=2.0, tau=tau, tau_prime=0.7, sigma_eps=0.5,
    )
    assert bd.bern_kl == 0.0  # no Bernoulli term in the ablation
    # slab term is the assignment-weighted per-component KL,
    # summed over both parameters (weight 0.8 and output bias 0)
    mu = np.array([0.5, 1.5])
    sigma = np.array([0.6, 0.9])
    pi = np.array([0.4, 0.6])
    phi = _hand_phi(np.array([0.8, 0.0]), mu, sigma, pi, tau)
    lam = 1 / (1 + np.exp(-0.3 / 0.7))
    expected = lam * float((phi @ gauss_kl(mu, sigma**2, 2.0)).sum())
    np.testing.assert_allclose(bd.slab_kl, expected, atol=1e-10)


def test_gaussian_prior_zero_when_matching():
    model = _scalar_model(0.0, 0.3, mu=[0.0, 0.0], sigma=[1.0, 1.0], pi=[0.5, 0.5])
    bd, _ = objective_gaussian_prior(
        model, (np.array([[1.0]]), np.array([0.0])), "regression",
        lambda_prior=0.3, sigma0_sq=1.0, tau=0.5, tau_prime=0.7,
    )
    np.testing.assert_allclose(bd.slab_kl, 0.0, atol=1e-12)


def test_objective_classification_cross_entropy():
    net = init_mlp(2, (4,), 3, seed=0)
    model = VariationalModel.initialize(net, K=2, tau=0.5, seed=1)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(6, 2))
    y = rng.integers(0, 3, 6)
    bd, grads = objective(
        model, (X, y), "classification",
        lambda_prior=0.5, sigma0_sq=1.0, tau=0.5, tau_prime=0.7,
    )
    assert np.isfinite(bd.total)
    assert np.any(grads["theta"] != 0)


def test_objective_mask_zeroes_effective_weights():
    model = _scalar_model(1.0, 5.0, mu=[1.0, 2.0], sigma=[1.0, 1.0], pi=[0.5, 0.5])
    X, y = np.array([[3.0]]), np.array([0.0])
    kw = dict(lambda_prior=0.5, sigma0_sq=1.0, tau=0.5, tau_prime=0.7, sigma_eps=1.0)
    bd_masked, _ = objective(model, (X, y), "regression", mask=np.zeros(2), **kw)
    const = 0.5 * np.log(2 * np.pi)
    np.testing.assert_allclose(bd_masked.nll, const, atol=1e-12)  # predicts 0


def test_objective_validation_errors():
    model = _scalar_model(1.0, 0.0, mu=[0.0], sigma=[1.0], pi=[1.0])
    X, y = np.array([[1.0]]), np.array([0.0])
    with pytest.raises(ConfigError):
        objective(model, (X, y), "ranking", lambda_prior=0.5, sigma0_sq=1.0,
                  tau=0.5, tau_prime=0.7)
    with pytest.raises(ConfigError):
        objective(model, (X, y), "regression", lambda_prior=1.0, sigma0_sq=1.0,
                  tau=0.5, tau_prime=0.7)
    with pytest.raises(ConfigError):
        objective(model, (X, y), "regression", lambda_prior=0.5, sigma0_sq=0.0,
                  tau=0.5, tau_prime=0.7)
    with pytest.raises(ValueError):
        objective(model, (np.zeros((0, 1)), np.zeros(0)), "regression",
                  lambda_prior=0.5, sigma0_sq=1.0, tau=0.5, tau_prime=0.7)


def test_argmax_constant_shift_invariance():
    """Adding a constant to all responsibility exponents keeps argmax phi."""
    rng = np.random.default_rng(7)
    for _ in range(50):
        e = rng.normal(size=5)
        phi1 = np.exp((e - e.max()))
        phi2 = np.exp((e + 3.7) - (e + 3.7).max())
        assert np.argmax(phi1) == np.argmax(phi2)


def _fd_total(model, batch, kw, h=1e-5):
    def value():
        bd, _ = objective(model, batch, "regression", **kw)
        return bd.total

    errs = []
    _, grads = objective(model, batch, "regression", **kw)
    flat_pairs = [(model.theta, grads["theta"]), (model.s, grads["s"])]
    for i, g in enumerate(model.groups):
        flat_pairs += [(g.mu, grads["mu"][i]), (g.sigma, grads["sigma"][i]),
                       (g.pi, grads["pi"][i])]
    for arr, garr in flat_pairs:
        flat = arr.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = value()
            flat[j] = orig - h
            fm = value()
            flat[j] = orig
            fd = (fp - fm) / (2 * h)
            ga = garr.ravel()[j]
            scale = max(abs(fd), abs(ga))
            errs.append(abs(fd - ga) if scale < 1e-6 else abs(fd - ga) / scale)
    return max(errs)


@pytest.mark.parametrize("prior", ["spike_slab", "gaussian"])
def test_objective_gradients_match_fd(prior):
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(8):
        net = init_mlp(2, (3,), 1, seed=trial)
        model = VariationalModel.initialize(net, K=2, tau=0.5, seed=trial + 100)
        batch = (rng.uniform(0, 1, (4, 2)), rng.normal(0, 1, 4))
        kw = dict(lambda_prior=0.4, sigma0_sq=1.0, tau=0.5, tau_prime=0.7,
                  sigma_eps=0.5, prior=prior)
        worst = max(worst, _fd_total(model, batch, kw))
    assert worst < 1e-4


def test_objective_decreases_under_optimizer_smoke():
    from sqs.trainer import AdamW, _grad_dict, _param_dicts

    rng = np.random.default_rng(1)
    net = init_mlp(2, (8,), 1, seed=0)
    model = VariationalModel.initialize(net, K=4, tau=5e-4, seed=0)
    X = rng.uniform(0, 1, (32, 2))
    y = np.sin(X).sum(axis=1) + rng.normal(0, 0.1, 32)
    lr_of = {"theta": 5e-4, "s": 0.012}
    for i in range(len(model.groups)):
        lr_of.update({f"mu{i}": 5e-4, f"sigma{i}": 5e-4, f"pi{i}": 5e-4})
    opt = AdamW(lr_of)
    losses = []
    for _ in range(50):
        bd, grads = objective(
            model, (X, y), "regression",
            lambda_prior=0.5, sigma0_sq=1.0, tau=5e-4, tau_prime=0.0125,
            sigma_eps=0.1,
        )
        losses.append(bd.total)
        opt.step(_param_dicts(model), _grad_dict(model, grads))
        for g in model.groups:
            np.maximum(g.sigma, 1e-4, out=g.sigma)
            np.clip(g.pi, 1e-8, None, out=g.pi)
            g.pi /= g.pi.sum()
    assert losses[-1] < losses[0]
