"""Compression training loop.

Two AdamW parameter groups drive the optimization: the quantization group
(theta, mu, sigma, pi) and the pruning group (retain logits s).  The retain
temperature is halved once at the midpoint of training, a cubic schedule
ramps the scheduled sparsity from dense to the target rate, and the schedule
is enforced by hard-masking the lowest-scoring weights (recomputed every
``mask_every`` steps; the logits keep training, so masked weights can
recover).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .network import Network, flatten
from .objective import (
    ConfigError,
    NumericError,
    ObjectiveBreakdown,
    VariationalModel,
    objective,
    retain_prob,
)

CHECKPOINT_MAGIC = b"SQSCKPT1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    K: int = 16
    steps: int = 1000
    batch_size: int = 128
    quant_lr: float = 5e-4
    prune_lr: float = 0.012
    tau: float = 5e-4
    tau_prime: float = 0.0125
    target_nonzero: float = 0.5
    window_strategy: str = "outlier"
    iqr_multiplier: float = 5.0
    sigma0_sq: float = 1.0
    lambda_prior: float | None = None  # defaults to target_nonzero
    sigma_eps: float = 0.1
    prior: str = "spike_slab"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    mask_every: int = 50
    sigma_train_floor: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if min(self.quant_lr, self.prune_lr, self.tau, self.tau_prime) <= 0:
            raise ConfigError("learning rates and temperatures must be positive")
        if not 0.0 < self.target_nonzero <= 1.0:
            raise ConfigError("target_nonzero must lie in (0, 1]")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("bad steps/batch_size")

    @property
    def effective_lambda_prior(self) -> float:
        lam = self.target_nonzero if self.lambda_prior is None else self.lambda_prior
        return min(max(lam, 1e-6), 1.0 - 1e-6)


def sparsity_schedule(step: int, total_steps: int, target_nonzero: float) -> float:
    """Cubic ramp of the scheduled nonzero fraction from 1 down to the target."""
    if not 0 <= step <= max(total_steps, 0):
        raise ValueError("step outside [0, total_steps]")
    if total_steps == 0:
        return target_nonzero
    frac = step / total_steps
    return 1.0 - (1.0 - target_nonzero) * frac**3


def schedule_mask(s, tau_prime: float, scheduled_nonzero: float) -> np.ndarray:
    """0/1 mask zeroing weights whose retain probability falls below the
    scheduled quantile.  Delegates the exact-count tie rule to the pruner."""
    from .inference import keep_mask

    lam = retain_prob(s, tau_prime)
    return keep_mask(lam, scheduled_nonzero).astype(np.float64)


class AdamW:
    """Decoupled-weight-decay Adam over a dict of named parameter arrays."""

    def __init__(self, lr_of, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr_of = dict(lr_of)
        self.beta1, self.beta2, self.eps, self.wd = beta1, beta2, eps, weight_decay
        self.t = 0
        self.m = {k: None for k in self.lr_of}
        self.v = {k: None for k in self.lr_of}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            if self.m[k] is None:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            lr = self.lr_of[k]
            p -= lr * (
                (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps) + self.wd * p
            )


@dataclass
class TrainState:
    step: int
    tau_prime: float
    scheduled_nonzero: float
    mask: np.ndarray
    optimizer: AdamW
    rng: np.random.Generator
    history: list = field(default_factory=list)


@dataclass
class CompressResult:
    model: VariationalModel
    state: TrainState
    config: TrainConfig


def _param_dicts(model: VariationalModel):
    params = {"theta": model.theta, "s": model.s}
    for i, g in enumerate(model.groups):
        params[f"mu{i}"] = g.mu
        params[f"sigma{i}"] = g.sigma
        params[f"pi{i}"] = g.pi
    return params


def _grad_dict(model: VariationalModel, grads):
    out = {"theta": grads["theta"], "s": grads["s"]}
    for i in range(len(model.groups)):
        out[f"mu{i}"] = grads["mu"][i]
        out[f"sigma{i}"] = grads["sigma"][i]
        out[f"pi{i}"] = grads["pi"][i]
    return out


def _project(model: VariationalModel, sigma_floor: float):
    # keep codebooks valid: sigma floored, pi back on the simplex
    for g in model.groups:
        np.maximum(g.sigma, sigma_floor, out=g.sigma)
        np.clip(g.pi, 1e-8, None, out=g.pi)
        g.pi /= g.pi.sum()


def _make_optimizer(model: VariationalModel, cfg: TrainConfig) -> AdamW:
    lr_of = {"theta": cfg.quant_lr, "s": cfg.prune_lr}
    for i in range(len(model.groups)):
        lr_of[f"mu{i}"] = cfg.quant_lr
        lr_of[f"sigma{i}"] = cfg.quant_lr
        lr_of[f"pi{i}"] = cfg.quant_lr
    return AdamW(lr_of, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)


def compress(
    net: Network, data, cfg: TrainConfig, task: str = "regression", stop_after=None
) -> CompressResult:
    """Run the full compression loop on a pretrained network.

    ``stop_after`` interrupts the run at the given step (for checkpointing);
    resuming later reproduces the uninterrupted trajectory bit-exactly.
    """
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    model = VariationalModel.initialize(
        net,
        K=cfg.K,
        tau=cfg.tau,
        window_strategy=cfg.window_strategy,
        iqr_multiplier=cfg.iqr_multiplier,
        seed=cfg.seed,
        tau_prime=cfg.tau_prime,
    )
    state = TrainState(
        step=0,
        tau_prime=cfg.tau_prime,
        scheduled_nonzero=1.0,
        mask=np.ones(model.T),
        optimizer=_make_optimizer(model, cfg),
        rng=np.random.default_rng(cfg.seed),
    )
    return _run(model, state, (X, y), cfg, task, stop_after)


def _run(model, state, data, cfg, task, stop_after=None) -> CompressResult:
    X, y = data
    n = X.shape[0]
    scale = n / min(cfg.batch_size, n)
    halve_at = cfg.steps // 2
    bad_streak = 0
    stop = cfg.steps if stop_after is None else min(stop_after, cfg.steps)
    while state.step < stop:
        t = state.step
        if t == halve_at and cfg.steps > 0:
            state.tau_prime = cfg.tau_prime / 2.0
        if t % cfg.mask_every == 0:
            state.scheduled_nonzero = sparsity_schedule(t, cfg.steps, cfg.target_nonzero)
            state.mask = schedule_mask(model.s, state.tau_prime, state.scheduled_nonzero)
        idx = state.rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        try:
            breakdown, grads = objective(
                model,
                (X[idx], np.asarray(y)[idx]),
                task,
                lambda_prior=cfg.effective_lambda_prior,
                sigma0_sq=cfg.sigma0_sq,
                tau=cfg.tau,
                tau_prime=state.tau_prime,
                sigma_eps=cfg.sigma_eps,
                scale=scale,
                mask=state.mask,
                prior=cfg.prior,
            )
        except NumericError:
            bad_streak += 1
            if bad_streak >= 3:
                raise TrainingDiverged(
                    f"non-finite loss for 3 consecutive steps at step {t}"
                )
            state.step += 1
            continue
        bad_streak = 0
        state.optimizer.step(_param_dicts(model), _grad_dict(model, grads))
        _project(model, cfg.sigma_train_floor)
        state.history.append(breakdown.total)
        state.step += 1
    return CompressResult(model, state, cfg)


# -- full-precision pretraining ------------------------------------------


def train_dense(
    net: Network,
    data,
    task: str = "regression",
    *,
    lr: float = 1e-2,
    steps: int = 2000,
    batch_size: int = 128,
    seed: int = 0,
    weight_decay: float = 0.0,
) -> Network:
    """Plain AdamW training of a dense network (MSE or cross-entropy)."""
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    theta, layout = flatten(net)
    opt = AdamW({"theta": lr}, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        theta_t = ad.tensor(theta)
        pred = layout.forward_batch_t(theta_t, X[idx])
        if task == "regression":
            yy = np.asarray(y, dtype=np.float64)[idx].reshape(pred.shape)
            loss = ((pred - yy) ** 2).mean()
        else:
            labels = np.asarray(y)[idx].astype(np.intp).ravel()
            onehot = np.zeros(pred.shape)
            onehot[np.arange(len(labels)), labels] = 1.0
            loss = (ad.logsumexp(pred, axis=1).sum() - (pred * onehot).sum()) * (
                1.0 / len(labels)
            )
        loss.backward()
        opt.step({"theta": theta}, {"theta": theta_t.grad})
    return layout.unflatten(theta)


def init_mlp(input_dim: int, hidden: tuple, output_dim: int, seed: int = 0) -> Network:
    """He-style random initialization of an MLP with shift biases set to 0."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, output_dim]
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a))
        layers.append((W, np.zeros(b)))
    return Network(layers)


# -- checkpointing --------------------------------------------------------


def _write_arr(buf, arr, dtype="<f8"):
    a = np.asarray(arr).astype(dtype)
    buf.write(struct.pack("<Q", a.size))
    buf.write(a.tobytes())


def _read_arr(buf, dtype="<f8"):
    (n,) = struct.unpack("<Q", buf.read(8))
    itemsize = np.dtype(dtype).itemsize
    return np.frombuffer(buf.read(n * itemsize), dtype=dtype).copy()


def _write_blob(buf, data: bytes):
    buf.write(struct.pack("<Q", len(data)))
    buf.write(data)


def _read_blob(buf) -> bytes:
    (n,) = struct.unpack("<Q", buf.read(8))
    return buf.read(n)


def save_checkpoint(path, result: CompressResult):
    model, state, cfg = result.model, result.state, result.config
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    _write_blob(buf, json.dumps(asdict(cfg)).encode())
    buf.write(struct.pack("<Qdd", state.step, state.tau_prime, state.scheduled_nonzero))
    _write_blob(buf, json.dumps(state.rng.bit_generator.state).encode())
    shapes = [(s.out_dim, s.in_dim) for s in model.layout.slots]
    _write_blob(buf, json.dumps(shapes).encode())
    _write_arr(buf, model.theta)
    _write_arr(buf, model.s)
    _write_arr(buf, state.mask)
    buf.write(struct.pack("<I", len(model.partitions)))
    for part in model.partitions:
        _write_arr(buf, part.boundaries)
        _write_arr(buf, part.redirect, "<i8")
        _write_blob(buf, part.strategy.encode())
        buf.write(struct.pack("<B", int(part.fallback)))
        _write_arr(buf, part.counts, "<i8")
        buf.write(struct.pack("<I", part.n_live))
        for cb in part.codebooks:
            _write_arr(buf, cb.mu)
            _write_arr(buf, cb.sigma)
            _write_arr(buf, cb.pi)
            buf.write(struct.pack("<d", cb.tau))
    buf.write(struct.pack("<I", len(model.groups)))
    for g in model.groups:
        buf.write(struct.pack("<II", g.layer, g.live_id))
        _write_arr(buf, g.indices, "<i8")
        _write_arr(buf, g.mu)
        _write_arr(buf, g.sigma)
        _write_arr(buf, g.pi)
    opt = state.optimizer
    buf.write(struct.pack("<Q", opt.t))
    for k in sorted(opt.lr_of):
        _write_blob(buf, k.encode())
        buf.write(struct.pack("<d", opt.lr_of[k]))
        for d in (opt.m, opt.v):
            present = d[k] is not None
            buf.write(struct.pack("<B", int(present)))
            if present:
                _write_arr(buf, d[k])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> CompressResult:
    from .codebook import GmmCodebook, WindowPartition
    from .network import ParamLayout
    from .objective import Group

    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    if buf.read(8) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    cfg = TrainConfig(**json.loads(_read_blob(buf)))
    step, tau_prime, sched = struct.unpack("<Qdd", buf.read(24))
    rng_state = json.loads(_read_blob(buf))
    shapes = [tuple(s) for s in json.loads(_read_blob(buf))]
    layout = ParamLayout(shapes)
    theta = _read_arr(buf)
    s = _read_arr(buf)
    mask = _read_arr(buf)
    (n_parts,) = struct.unpack("<I", buf.read(4))
    partitions = []
    for _ in range(n_parts):
        boundaries = _read_arr(buf)
        redirect = _read_arr(buf, "<i8").astype(np.intp)
        strategy = _read_blob(buf).decode()
        (fb,) = struct.unpack("<B", buf.read(1))
        counts = _read_arr(buf, "<i8")
        (n_live,) = struct.unpack("<I", buf.read(4))
        cbs = []
        for _ in range(n_live):
            mu = _read_arr(buf)
            sg = _read_arr(buf)
            pi = _read_arr(buf)
            (tau,) = struct.unpack("<d", buf.read(8))
            cbs.append(GmmCodebook(mu, sg, pi, tau))
        partitions.append(
            WindowPartition(boundaries, cbs, redirect, strategy, bool(fb), counts)
        )
    (n_groups,) = struct.unpack("<I", buf.read(4))
    groups = []
    for _ in range(n_groups):
        layer, live_id = struct.unpack("<II", buf.read(8))
        idx = _read_arr(buf, "<i8").astype(np.intp)
        mu = _read_arr(buf)
        sg = _read_arr(buf)
        pi = _read_arr(buf)
        groups.append(Group(layer, live_id, idx, mu, sg, pi))
    model = VariationalModel(layout, theta, s, partitions, groups)
    opt = _make_optimizer(model, cfg)
    (opt.t,) = struct.unpack("<Q", buf.read(8))
    for _ in range(len(opt.lr_of)):
        k = _read_blob(buf).decode()
        (opt.lr_of[k],) = struct.unpack("<d", buf.read(8))
        for d in (opt.m, opt.v):
            (present,) = struct.unpack("<B", buf.read(1))
            d[k] = _read_arr(buf) if present else None
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    state = TrainState(step, tau_prime, sched, mask, opt, rng)
    return CompressResult(model, state, cfg)


def resume(path, data, task: str = "regression", stop_after=None) -> CompressResult:
    """Continue training from a checkpoint; reproduces the uninterrupted run."""
    result = load_checkpoint(path)
    X, y = data
    return _run(result.model, result.state, (np.asarray(X, dtype=np.float64), y),
                result.config, task, stop_after)
