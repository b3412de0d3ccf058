"""Training loop: schedules, optimizer groups, determinism, checkpoints."""

import numpy as np
import pytest

from sqs import trainer as tr
from sqs.objective import ConfigError, NumericError
from sqs.trainer import (
    AdamW,
    TrainConfig,
    TrainingDiverged,
    compress,
    init_mlp,
    load_checkpoint,
    resume,
    save_checkpoint,
    sparsity_schedule,
    train_dense,
)


def _toy_regression(n=64, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 2))
    y = np.sin(2 * np.pi * X).sum(axis=1) / 2 + rng.normal(0, 0.1, n)
    return X, y


# -- config ---------------------------------------------------------------


def test_config_defaults_match_documented_hyperparameters():
    cfg = TrainConfig()
    assert cfg.K == 16
    assert cfg.quant_lr == 5e-4
    assert cfg.prune_lr == 0.012
    assert cfg.tau == 5e-4
    assert cfg.tau_prime == 0.0125
    assert cfg.iqr_multiplier == 5.0
    assert (cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay) == (0.9, 0.999, 1e-8, 0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(quant_lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(target_nonzero=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(target_nonzero=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(steps=-1)


def test_lambda_prior_defaults_to_target_nonzero():
    assert TrainConfig(target_nonzero=0.25).effective_lambda_prior == 0.25
    assert TrainConfig(target_nonzero=0.25, lambda_prior=0.4).effective_lambda_prior == 0.4


# -- schedule -------------------------------------------------------------


def test_sparsity_schedule_endpoints_and_midpoint():
    assert sparsity_schedule(0, 100, 0.5) == 1.0
    assert sparsity_schedule(100, 100, 0.5) == 0.5
    np.testing.assert_allclose(sparsity_schedule(50, 100, 0.5), 0.9375, atol=1e-15)


def test_sparsity_schedule_monotone():
    vals = [sparsity_schedule(t, 200, 0.1) for t in range(201)]
    assert np.all(np.diff(vals) <= 0)
    with pytest.raises(ValueError):
        sparsity_schedule(201, 200, 0.1)


# -- optimizer ------------------------------------------------------------


def test_adamw_two_group_learning_rates():
    """First step with fresh moments moves each param by lr * sign(grad)."""
    mu = np.array([1.0])
    s = np.array([1.0])
    opt = AdamW({"mu": 5e-4, "s": 0.012}, eps=0.0)
    opt.step({"mu": mu, "s": s}, {"mu": np.array([2.0]), "s": np.array([-3.0])})
    # bias-corrected m/sqrt(v) is exactly sign(g) on the first step
    np.testing.assert_allclose(mu, [1.0 - 5e-4], atol=1e-15)
    np.testing.assert_allclose(s, [1.0 + 0.012], atol=1e-15)


def test_adamw_decoupled_weight_decay():
    p = np.array([10.0])
    opt = AdamW({"p": 0.1}, weight_decay=0.5, eps=0.0)
    opt.step({"p": p}, {"p": np.array([1.0])})
    # update = lr * (sign(g) + wd * p) = 0.1 * (1 + 5)
    np.testing.assert_allclose(p, [10.0 - 0.6], atol=1e-12)


# -- compress loop --------------------------------------------------------


def test_compress_zero_steps_returns_initialization():
    X, y = _toy_regression()
    net = init_mlp(2, (8,), 1, seed=0)
    cfg = TrainConfig(K=4, steps=0, seed=0)
    result = compress(net, (X, y), cfg)
    from sqs.network import flatten

    theta0, _ = flatten(net)
    np.testing.assert_array_equal(result.model.theta, theta0)
    assert result.state.step == 0


def test_compress_loss_decreases_on_scalar_toy():
    rng = np.random.default_rng(0)
    X = rng.uniform(0.5, 1.5, (32, 1))
    y = 2.0 * X[:, 0] + rng.normal(0, 0.05, 32)
    net = init_mlp(1, (), 1, seed=0)
    cfg = TrainConfig(K=2, steps=100, batch_size=32, seed=0, target_nonzero=1.0)
    result = compress(net, (X, y), cfg)
    hist = result.state.history
    assert hist[-1] < hist[0]


def test_compress_deterministic():
    X, y = _toy_regression()
    net = init_mlp(2, (6,), 1, seed=1)
    cfg = TrainConfig(K=4, steps=40, batch_size=16, seed=7)
    a = compress(net, (X, y), cfg)
    b = compress(net, (X, y), cfg)
    np.testing.assert_array_equal(a.model.theta, b.model.theta)
    np.testing.assert_array_equal(a.model.s, b.model.s)
    for ga, gb in zip(a.model.groups, b.model.groups):
        np.testing.assert_array_equal(ga.mu, gb.mu)


def test_tau_prime_halved_exactly_once_at_midpoint():
    X, y = _toy_regression()
    net = init_mlp(2, (4,), 1, seed=0)
    cfg = TrainConfig(K=2, steps=10, batch_size=8, seed=0)
    result = compress(net, (X, y), cfg)
    assert result.state.tau_prime == cfg.tau_prime / 2.0

    cfg2 = TrainConfig(K=2, steps=11, batch_size=8, seed=0)
    res2 = compress(net, (X, y), cfg2)
    assert res2.state.tau_prime == cfg2.tau_prime / 2.0  # halved once, not twice


def test_divergence_aborts_after_three_bad_steps(monkeypatch):
    X, y = _toy_regression()
    net = init_mlp(2, (4,), 1, seed=0)

    def explode(*args, **kwargs):
        raise NumericError("non-finite objective term: nll")

    monkeypatch.setattr(tr, "objective", explode)
    cfg = TrainConfig(K=2, steps=10, batch_size=8, seed=0)
    with pytest.raises(TrainingDiverged):
        compress(net, (X, y), cfg)


def test_schedule_mask_enforced_during_training():
    X, y = _toy_regression(n=128)
    net = init_mlp(2, (8,), 1, seed=0)
    cfg = TrainConfig(K=4, steps=100, batch_size=32, seed=0, target_nonzero=0.5)
    result = compress(net, (X, y), cfg)
    # at the last recompute (step 100 never happens; step 50+ -> scheduled
    # nonzero < 1), some weights must be masked
    assert result.state.mask.sum() < result.model.T
    assert set(np.unique(result.state.mask)) <= {0.0, 1.0}


# -- dense pretraining ----------------------------------------------------


def test_train_dense_reduces_mse():
    X, y = _toy_regression(n=256)
    net = init_mlp(2, (16,), 1, seed=0)
    before = float(np.mean((net.forward_batch(X)[:, 0] - y) ** 2))
    net = train_dense(net, (X, y), "regression", steps=500, seed=0)
    after = float(np.mean((net.forward_batch(X)[:, 0] - y) ** 2))
    assert after < before


def test_train_dense_classification_learns():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(256, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(np.intp)
    net = init_mlp(2, (8,), 2, seed=0)
    net = train_dense(net, (X, y), "classification", steps=500, seed=0)
    acc = float(np.mean(net.forward_batch(X).argmax(axis=1) == y))
    assert acc > 0.9


# -- checkpointing --------------------------------------------------------


def test_checkpoint_roundtrip_and_bitexact_resume(tmp_path):
    X, y = _toy_regression(n=128)
    net = init_mlp(2, (6,), 1, seed=0)
    cfg = TrainConfig(K=4, steps=60, batch_size=32, seed=3)

    full = compress(net, (X, y), cfg)

    # interrupted run: stop at 25 steps, checkpoint, resume to 60
    partial = compress(net, (X, y), cfg, stop_after=25)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, partial)

    loaded = load_checkpoint(path)
    assert loaded.state.step == 25
    np.testing.assert_array_equal(loaded.model.theta, partial.model.theta)
    np.testing.assert_array_equal(loaded.state.mask, partial.state.mask)
    assert loaded.state.optimizer.t == partial.state.optimizer.t

    resumed = resume(path, (X, y))
    np.testing.assert_array_equal(resumed.model.theta, full.model.theta)
    np.testing.assert_array_equal(resumed.model.s, full.model.s)
    for ga, gb in zip(resumed.model.groups, full.model.groups):
        np.testing.assert_array_equal(ga.mu, gb.mu)
        np.testing.assert_array_equal(ga.sigma, gb.sigma)
        np.testing.assert_array_equal(ga.pi, gb.pi)
    assert resumed.state.tau_prime == full.state.tau_prime


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_resume_across_tau_prime_halving_is_bitexact(tmp_path):
    """Checkpoint exactly at the halving step must not halve twice."""
    X, y = _toy_regression(n=64)
    net = init_mlp(2, (4,), 1, seed=0)
    cfg = TrainConfig(K=2, steps=20, batch_size=16, seed=5)
    full = compress(net, (X, y), cfg)

    partial = compress(net, (X, y), cfg, stop_after=10)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, partial)
    resumed = resume(path, (X, y))
    assert resumed.state.tau_prime == full.state.tau_prime == cfg.tau_prime / 2
    np.testing.assert_array_equal(resumed.model.theta, full.model.theta)
