"""Scikit-learn compatible front end.

``DenseMLP`` trains a full-precision network; ``SQSCompressor`` takes a
fitted ``DenseMLP`` (or fits one itself) and learns the joint
pruned-and-quantized representation.  Both follow the estimator protocol
(get_params/set_params, fit returns self) so they compose with pipelines
and model selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from . import inference, trainer
from .metrics import build_report
from .network import Network


class DenseMLP(BaseEstimator):
    """Full-precision MLP trained with AdamW (regression or classification)."""

    def __init__(
        self,
        hidden=(32, 32),
        task="regression",
        lr=1e-2,
        steps=2000,
        batch_size=128,
        weight_decay=0.0,
        seed=0,
    ):
        self.hidden = hidden
        self.task = task
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if self.task == "classification":
            self.classes_ = np.unique(y)
            out_dim = len(self.classes_)
            y = np.searchsorted(self.classes_, y)
        else:
            out_dim = 1
        net = trainer.init_mlp(X.shape[1], tuple(self.hidden), out_dim, seed=self.seed)
        self.network_ = trainer.train_dense(
            net,
            (X, y),
            self.task,
            lr=self.lr,
            steps=self.steps,
            batch_size=self.batch_size,
            seed=self.seed,
            weight_decay=self.weight_decay,
        )
        return self

    def _check_fitted(self) -> Network:
        if not hasattr(self, "network_"):
            raise NotFittedError("call fit first")
        return self.network_

    def decision_function(self, X):
        net = self._check_fitted()
        X = check_array(X)
        return net.forward_batch(X)

    def predict(self, X):
        out = self.decision_function(X)
        if self.task == "classification":
            return self.classes_[out.argmax(axis=1)]
        return out[:, 0]

    def score(self, X, y):
        if self.task == "classification":
            return float(np.mean(self.predict(X) == np.asarray(y)))
        resid = self.predict(X) - np.asarray(y, dtype=np.float64)
        return -float(np.mean(resid * resid))  # negative MSE, higher is better


class SQSCompressor(BaseEstimator):
    """Joint pruning + quantization of a dense MLP via variational learning.

    If ``base_estimator`` is a fitted :class:`DenseMLP` its network is
    compressed directly; otherwise ``fit`` pretrains one first.
    """

    def __init__(
        self,
        base_estimator=None,
        K=16,
        target_nonzero=0.5,
        steps=1000,
        batch_size=128,
        quant_lr=5e-4,
        prune_lr=0.012,
        tau=5e-4,
        tau_prime=0.0125,
        window_strategy="outlier",
        iqr_multiplier=5.0,
        sigma0_sq=1.0,
        sigma_eps=0.1,
        prior="spike_slab",
        mode="greedy",
        bayes_samples=8,
        task="regression",
        seed=0,
    ):
        self.base_estimator = base_estimator
        self.K = K
        self.target_nonzero = target_nonzero
        self.steps = steps
        self.batch_size = batch_size
        self.quant_lr = quant_lr
        self.prune_lr = prune_lr
        self.tau = tau
        self.tau_prime = tau_prime
        self.window_strategy = window_strategy
        self.iqr_multiplier = iqr_multiplier
        self.sigma0_sq = sigma0_sq
        self.sigma_eps = sigma_eps
        self.prior = prior
        self.mode = mode
        self.bayes_samples = bayes_samples
        self.task = task
        self.seed = seed

    def _config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            K=self.K,
            steps=self.steps,
            batch_size=self.batch_size,
            quant_lr=self.quant_lr,
            prune_lr=self.prune_lr,
            tau=self.tau,
            tau_prime=self.tau_prime,
            target_nonzero=self.target_nonzero,
            window_strategy=self.window_strategy,
            iqr_multiplier=self.iqr_multiplier,
            sigma0_sq=self.sigma0_sq,
            sigma_eps=self.sigma_eps,
            prior=self.prior,
            seed=self.seed,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        base = self.base_estimator
        if base is None:
            base = DenseMLP(task=self.task, seed=self.seed).fit(X, y)
        elif not hasattr(base, "network_"):
            raise NotFittedError("base_estimator must be fitted")
        if self.task == "classification":
            self.classes_ = base.classes_
            y = np.searchsorted(self.classes_, y)
        cfg = self._config()
        result = trainer.compress(base.network_, (X, y), cfg, self.task)
        self.result_ = result
        self.snapshot_ = inference.snapshot(
            result.model, tau=cfg.tau, tau_prime=result.state.tau_prime
        )
        self.keep_ = inference.prune(self.snapshot_, self.target_nonzero)
        self.compressed_ = inference.finalize(
            self.snapshot_, self.target_nonzero, K=self.K, seed=self.seed
        )
        self.report_ = build_report(self.compressed_)
        return self

    def decision_function(self, X):
        if not hasattr(self, "snapshot_"):
            raise NotFittedError("call fit first")
        X = check_array(X)
        if self.mode == "bayes":
            rng = np.random.default_rng(self.seed + 1)
            return inference.predict_bayes(
                self.snapshot_, X, self.bayes_samples, rng, keep=self.keep_
            )
        return inference.predict_greedy(self.snapshot_, X, keep=self.keep_)

    def predict(self, X):
        out = self.decision_function(X)
        if self.task == "classification":
            return self.classes_[out.argmax(axis=1)]
        return out[:, 0]

    def score(self, X, y):
        if self.task == "classification":
            return float(np.mean(self.predict(X) == np.asarray(y)))
        resid = self.predict(X) - np.asarray(y, dtype=np.float64)
        return -float(np.mean(resid * resid))
