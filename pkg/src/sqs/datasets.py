"""Deterministic data sources: synthetic regression with uniform covariates,
a small synthetic classification task, delimited-text tabular loading and
long-tailed weight samples for the windowing studies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network

F0_CATALOG = ("sum_of_sines", "polynomial", "teacher")


class DatasetError(ValueError):
    pass


@dataclass
class RegressionTask:
    f0: str = "sum_of_sines"
    p: int = 4
    n: int = 2000
    sigma_eps: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.f0 not in F0_CATALOG:
            raise DatasetError(f"unknown target function {self.f0!r}")
        if self.p < 1 or self.n < 10:
            raise DatasetError("need p >= 1 and n >= 10")


def _teacher_net(p: int, seed: int) -> Network:
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0, 0.2, size=(16, p))
    # a few large-magnitude weights to give the teacher a long tail
    flat = W1.ravel()
    picks = rng.choice(flat.size, size=max(1, flat.size // 20), replace=False)
    flat[picks] *= 8.0
    W2 = rng.normal(0, 0.5, size=(1, 16))
    return Network([(W1, np.zeros(16)), (W2, np.zeros(1))])


def _eval_f0(task: RegressionTask, X: np.ndarray) -> np.ndarray:
    if task.f0 == "sum_of_sines":
        return np.sin(2.0 * np.pi * X).sum(axis=1) / task.p
    if task.f0 == "polynomial":
        s = X.sum(axis=1) / task.p
        return 2.0 * s * s - s
    net = _teacher_net(task.p, task.seed + 7)
    return net.forward_batch(X)[:, 0]


def gen_regression(task: RegressionTask):
    """Noisy regression sample with a deterministic 80/20 train/test split.

    Returns ((X_train, y_train), (X_test, y_test)).
    """
    rng = np.random.default_rng(task.seed)
    X = rng.uniform(0.0, 1.0, size=(task.n, task.p))
    y = _eval_f0(task, X) + rng.normal(0.0, task.sigma_eps, size=task.n)
    n_train = int(round(task.n * 0.8))
    return (X[:n_train], y[:n_train]), (X[n_train:], y[n_train:])


def gen_classification(n: int = 2000, seed: int = 0, noise: float = 0.15):
    """Two interleaved half-circles in 2-D, standardized; 80/20 split."""
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    X0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    X1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    X = np.concatenate([X0, X1])
    y = np.concatenate([np.zeros(n0, dtype=np.intp), np.ones(n1, dtype=np.intp)])
    X += rng.normal(0.0, noise, size=X.shape)
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    n_train = int(round(n * 0.8))
    return (X[:n_train], y[:n_train]), (X[n_train:], y[n_train:])


@dataclass
class TabularTask:
    features: np.ndarray
    labels: np.ndarray
    mean: np.ndarray
    std: np.ndarray


def load_tabular(path, *, has_header: bool = False) -> TabularTask:
    """Parse comma-delimited text; last column is an integer class label.

    Features are z-scored and the standardization parameters recorded.
    """
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if has_header and lineno == 1:
                continue
            cells = line.split(",")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as e:
                raise DatasetError(f"{path}: non-numeric cell at line {lineno}") from e
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DatasetError(f"{path}: inconsistent column counts {sorted(widths)}")
    if widths.pop() < 2:
        raise DatasetError(f"{path}: need at least one feature column and a label")
    data = np.asarray(rows)
    feats, labels_f = data[:, :-1], data[:, -1]
    labels = labels_f.astype(np.intp)
    if np.any(labels != labels_f):
        raise DatasetError(f"{path}: labels must be integers")
    if np.any(labels < 0):
        raise DatasetError(f"{path}: labels must be nonnegative")
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std == 0] = 1.0
    return TabularTask((feats - mean) / std, labels, mean, std)


def gen_longtail_weights(n: int, tail_fraction: float, tail_scale: float, seed: int = 0):
    """Gaussian bulk (std 0.02) plus a symmetric heavy tail at +-tail_scale."""
    if not 0.0 <= tail_fraction <= 0.1:
        raise DatasetError("tail_fraction must lie in [0, 0.1]")
    rng = np.random.default_rng(seed)
    n_tail = int(round(n * tail_fraction))
    bulk = rng.normal(0.0, 0.02, size=n - n_tail)
    signs = rng.choice([-1.0, 1.0], size=n_tail)
    tail = signs * tail_scale * (1.0 + np.abs(rng.normal(0.0, 1.0, size=n_tail)))
    return np.concatenate([bulk, tail])
