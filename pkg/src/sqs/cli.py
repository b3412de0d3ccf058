"""Command-line front end.

Subcommands: ``train`` (full-precision pretraining), ``compress`` (joint
prune+quantize of a dense checkpoint), ``eval`` (metrics for a compressed
artifact), ``ablate`` (prior / window / inference studies) and ``verify``
(self-contained oracle suites).  Every command writes its outputs under a
run directory with fixed filenames and a ``manifest.txt`` that echoes the
fully resolved configuration.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import codec, datasets, inference, metrics, trainer
from .codebook import GmmCodebook, assignment, partition_windows
from .network import Network, ParamLayout
from .objective import ConfigError


class UsageError(ValueError):
    pass


# -- config files ---------------------------------------------------------

_CONFIG_TYPES = {
    "dataset": str,
    "task": str,
    "f0": str,
    "p": int,
    "n": int,
    "sigma_eps": float,
    "noise": float,
    "data": str,
    "data_seed": int,
    "hidden": str,
    "lr": float,
    "dense_steps": int,
    "weight_decay": float,
    "K": int,
    "steps": int,
    "batch_size": int,
    "quant_lr": float,
    "prune_lr": float,
    "tau": float,
    "tau_prime": float,
    "target_nonzero": float,
    "window_strategy": str,
    "iqr_multiplier": float,
    "sigma0_sq": float,
    "lambda_prior": float,
    "prior": str,
    "mask_every": int,
    "seed": int,
    "mode": str,
    "samples": int,
}

DEFAULT_CONFIG = {
    "dataset": "regression",
    "f0": "sum_of_sines",
    "p": 4,
    "n": 2000,
    "sigma_eps": 0.1,
    "noise": 0.15,
    "data_seed": 0,
    "hidden": "32,32",
    "lr": 1e-2,
    "dense_steps": 2000,
    "weight_decay": 0.0,
    "K": 16,
    "steps": 1000,
    "batch_size": 128,
    "quant_lr": 5e-4,
    "prune_lr": 0.012,
    "tau": 5e-4,
    "tau_prime": 0.0125,
    "target_nonzero": 0.5,
    "window_strategy": "outlier",
    "iqr_multiplier": 5.0,
    "sigma0_sq": 1.0,
    "prior": "spike_slab",
    "mask_every": 50,
    "seed": 0,
    "mode": "greedy",
    "samples": 8,
}


def parse_config(path) -> dict:
    """Line-oriented key=value file with # comments."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_TYPES:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _CONFIG_TYPES[key](value)
            except ValueError as e:
                raise UsageError(f"{path}:{lineno}: bad value for {key}") from e
    return out


def resolve_config(args) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        cfg.update(parse_config(path))
    # flags override the file
    overrides = {
        "seed": getattr(args, "seed", None),
        "K": getattr(args, "k", None),
        "target_nonzero": getattr(args, "nonzero", None),
        "window_strategy": getattr(args, "window", None),
        "iqr_multiplier": getattr(args, "iqr_mult", None),
        "mode": getattr(args, "mode", None),
        "samples": getattr(args, "samples", None),
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _task_of(cfg: dict) -> str:
    return "regression" if cfg["dataset"] == "regression" else "classification"


def make_data(cfg: dict):
    """(train, test) splits for the configured data source."""
    if cfg["dataset"] == "regression":
        task = datasets.RegressionTask(
            f0=cfg["f0"], p=cfg["p"], n=cfg["n"],
            sigma_eps=cfg["sigma_eps"], seed=cfg["data_seed"],
        )
        return datasets.gen_regression(task)
    if cfg["dataset"] == "classification":
        return datasets.gen_classification(cfg["n"], seed=cfg["data_seed"], noise=cfg["noise"])
    if cfg["dataset"] == "tabular":
        if "data" not in cfg:
            raise UsageError("dataset=tabular needs data=<path>")
        tab = datasets.load_tabular(cfg["data"])
        n_train = int(round(len(tab.labels) * 0.8))
        X, y = tab.features, tab.labels
        return (X[:n_train], y[:n_train]), (X[n_train:], y[n_train:])
    raise UsageError(f"unknown dataset {cfg['dataset']!r}")


def _hidden_of(cfg: dict) -> tuple:
    try:
        return tuple(int(h) for h in str(cfg["hidden"]).split(",") if h.strip())
    except ValueError as e:
        raise UsageError(f"bad hidden sizes {cfg['hidden']!r}") from e


def train_config_of(cfg: dict) -> trainer.TrainConfig:
    kwargs = {}
    for f in fields(trainer.TrainConfig):
        if f.name in cfg:
            kwargs[f.name] = cfg[f.name]
    return trainer.TrainConfig(**kwargs)


# -- artifacts ------------------------------------------------------------


def save_dense(path, net: Network, meta: dict):
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, layer in enumerate(net.layers):
        arrays[f"W{i}"] = layer.W
        arrays[f"b{i}"] = layer.b
    np.savez(path, **arrays)


def load_dense(path) -> tuple[Network, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        layers = []
        i = 0
        while f"W{i}" in z:
            layers.append((z[f"W{i}"], z[f"b{i}"]))
            i += 1
    return Network(layers), meta


def save_snapshot(path, snap: inference.PosteriorSnapshot):
    """Posterior sidecar (npz): everything Bayesian averaging needs."""
    meta = {
        "tau": snap.tau,
        "shapes": [(s.out_dim, s.in_dim) for s in snap.layout.slots],
        "partitions": [
            {"strategy": p.strategy, "fallback": p.fallback, "n_live": p.n_live}
            for p in snap.partitions
        ],
        "groups": [{"layer": g.layer, "live_id": g.live_id} for g in snap.groups],
    }
    arrays = {
        "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        "lambda_hat": snap.lambda_hat,
    }
    for l, p in enumerate(snap.partitions):
        arrays[f"p{l}_boundaries"] = p.boundaries
        arrays[f"p{l}_redirect"] = np.asarray(p.redirect, dtype=np.int64)
        arrays[f"p{l}_counts"] = np.asarray(p.counts, dtype=np.int64)
        for j, cb in enumerate(p.codebooks):
            arrays[f"p{l}_cb{j}_mu"] = cb.mu
            arrays[f"p{l}_cb{j}_sigma"] = cb.sigma
            arrays[f"p{l}_cb{j}_pi"] = cb.pi
    for i, g in enumerate(snap.groups):
        arrays[f"g{i}_indices"] = np.asarray(g.indices, dtype=np.int64)
        arrays[f"g{i}_mu"] = g.mu
        arrays[f"g{i}_sigma"] = g.sigma
        arrays[f"g{i}_phi"] = g.phi
    with open(path, "wb") as f:  # keep the exact filename (savez appends .npz)
        np.savez(f, **arrays)


def load_snapshot(path) -> inference.PosteriorSnapshot:
    from .codebook import WindowPartition

    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        layout = ParamLayout([tuple(s) for s in meta["shapes"]])
        partitions = []
        for l, pm in enumerate(meta["partitions"]):
            cbs = [
                GmmCodebook(
                    z[f"p{l}_cb{j}_mu"], z[f"p{l}_cb{j}_sigma"],
                    z[f"p{l}_cb{j}_pi"], meta["tau"],
                )
                for j in range(pm["n_live"])
            ]
            partitions.append(
                WindowPartition(
                    boundaries=z[f"p{l}_boundaries"],
                    codebooks=cbs,
                    redirect=z[f"p{l}_redirect"].astype(np.intp),
                    strategy=pm["strategy"],
                    fallback=pm["fallback"],
                    counts=z[f"p{l}_counts"],
                )
            )
        groups = [
            inference.SnapshotGroup(
                gm["layer"], gm["live_id"],
                z[f"g{i}_indices"].astype(np.intp),
                z[f"g{i}_mu"], z[f"g{i}_sigma"], z[f"g{i}_phi"],
            )
            for i, gm in enumerate(meta["groups"])
        ]
        return inference.PosteriorSnapshot(
            layout, z["lambda_hat"], partitions, groups, meta["tau"]
        )


@dataclass
class RunManifest:
    command: str
    config: dict
    artifacts: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    def write(self, path):
        lines = [f"command = {self.command}"]
        for key in sorted(self.config):
            lines.append(f"config.{key} = {self.config[key]}")
        for key in sorted(self.artifacts):
            lines.append(f"artifact.{key} = {self.artifacts[key]}")
        for key in sorted(self.metrics):
            lines.append(f"metric.{key} = {self.metrics[key]!r}")
        lines.append(f"wall_seconds = {self.wall_seconds:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")


def write_metrics_csv(path, rows: list[dict]):
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                              for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")


def _run_dir(args, command: str) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_metric(pred: np.ndarray, y, task: str) -> float:
    """Test MSE for regression, accuracy for classification."""
    if task == "regression":
        resid = pred[:, 0] - np.asarray(y, dtype=np.float64)
        return float(np.mean(resid * resid))
    return float(np.mean(pred.argmax(axis=1) == np.asarray(y)))


# -- commands -------------------------------------------------------------


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = resolve_config(args)
    task = _task_of(cfg)
    (Xtr, ytr), (Xte, yte) = make_data(cfg)
    out_dim = 1 if task == "regression" else int(np.max(ytr)) + 1
    net = trainer.init_mlp(Xtr.shape[1], _hidden_of(cfg), out_dim, seed=cfg["seed"])
    net = trainer.train_dense(
        net, (Xtr, ytr), task,
        lr=cfg["lr"], steps=cfg["dense_steps"], batch_size=cfg["batch_size"],
        seed=cfg["seed"], weight_decay=cfg["weight_decay"],
    )
    run = _run_dir(args, "train")
    dense_path = run / "dense.npz"
    save_dense(dense_path, net, {"task": task, "config": cfg})
    metric = _eval_metric(net.forward_batch(Xte), yte, task)
    name = "test_mse" if task == "regression" else "test_accuracy"
    manifest = RunManifest("train", cfg, {"dense": str(dense_path)}, {name: metric},
                           time.perf_counter() - t0)
    manifest.write(run / "manifest.txt")
    write_metrics_csv(run / "metrics.csv", [{"metric": name, "value": metric}])
    print(f"{name} = {metric:.6f}")
    print(f"wrote {dense_path}")
    return 0


def cmd_compress(args) -> int:
    t0 = time.perf_counter()
    cfg = resolve_config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    net, meta = load_dense(ckpt)
    task = meta.get("task", _task_of(cfg))
    (Xtr, ytr), (Xte, yte) = make_data(cfg)
    tc = train_config_of(cfg)
    result = trainer.compress(net, (Xtr, ytr), tc, task)
    snap = inference.snapshot(result.model, tau=tc.tau, tau_prime=result.state.tau_prime)
    compact = inference.finalize(snap, tc.target_nonzero, K=tc.K, seed=tc.seed)
    report = metrics.build_report(compact)
    run = _run_dir(args, "compress")
    sqz = run / "model.sqz"
    sqz.write_bytes(codec.encode(compact))
    save_snapshot(run / "snapshot.bin", snap)
    keep = inference.prune(snap, tc.target_nonzero)
    metric = _eval_metric(inference.predict_greedy(snap, Xte, keep=keep), yte, task)
    name = "test_mse" if task == "regression" else "test_accuracy"
    rows = [
        {"metric": name, "value": metric},
        {"metric": "bits", "value": report.bits},
        {"metric": "effective_bits", "value": report.effective_bits},
        {"metric": "compression_rate", "value": report.compression_rate},
        {"metric": "measured_rate", "value": report.measured_rate},
        {"metric": "measured_rate_nominal", "value": report.measured_rate_nominal},
        {"metric": "dense_bytes", "value": report.dense_bytes},
        {"metric": "compressed_bytes", "value": report.compressed_bytes},
    ]
    write_metrics_csv(run / "metrics.csv", rows)
    manifest = RunManifest(
        "compress", cfg,
        {"model": str(sqz), "snapshot": str(run / "snapshot.bin"), "checkpoint": str(ckpt)},
        {r["metric"]: r["value"] for r in rows},
        time.perf_counter() - t0,
    )
    manifest.write(run / "manifest.txt")
    for r in rows:
        print(f"{r['metric']} = {r['value']}")
    print(f"wrote {sqz}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cfg = resolve_config(args)
    if cfg["samples"] < 1:
        raise UsageError("--samples must be >= 1")
    model_path = Path(args.model)
    if not model_path.exists():
        raise UsageError(f"model file not found: {model_path}")
    task = _task_of(cfg)
    _, (Xte, yte) = make_data(cfg)
    data = model_path.read_bytes()
    if data[:4] == codec.MAGIC:
        if cfg["mode"] == "bayes":
            raise UsageError(
                "Bayesian averaging needs the posterior snapshot (snapshot.bin); "
                "the compact .sqz file stores only greedy codes"
            )
        compact = codec.decode(data)
        pred = compact.predict(Xte)
        report = metrics.build_report(compact)
        rate = report.compression_rate
    else:
        snap = load_snapshot(model_path)
        keep = inference.prune(snap, cfg["target_nonzero"])
        if cfg["mode"] == "bayes":
            rng = np.random.default_rng(cfg["seed"] + 1)
            pred = inference.predict_bayes(snap, Xte, cfg["samples"], rng, keep=keep)
        else:
            pred = inference.predict_greedy(snap, Xte, keep=keep)
        rate = metrics.compression_rate(np.log2(cfg["K"]), cfg["target_nonzero"])
    metric = _eval_metric(pred, yte, task)
    name = "test_mse" if task == "regression" else "test_accuracy"
    rows = [{"metric": name, "value": metric},
            {"metric": "compression_rate", "value": float(rate)}]
    if args.baseline:
        base_path = Path(args.baseline)
        if not base_path.exists():
            raise UsageError(f"baseline not found: {base_path}")
        base_net, _ = load_dense(base_path)
        base = _eval_metric(base_net.forward_batch(Xte), yte, task)
        drop = metrics.accuracy_drop(base, metric) if task == "classification" \
            else metric - base
        rows.append({"metric": f"baseline_{name}", "value": base})
        rows.append({"metric": "drop", "value": drop})
    run = _run_dir(args, "eval")
    write_metrics_csv(run / "metrics.csv", rows)
    RunManifest("eval", cfg, {"model": str(model_path)},
                {r["metric"]: r["value"] for r in rows},
                time.perf_counter() - t0).write(run / "manifest.txt")
    for r in rows:
        print(f"{r['metric']} = {r['value']}")
    return 0


def _quantize_with_partition(part, values: np.ndarray) -> np.ndarray:
    """Greedy per-window quantization of raw values."""
    win = part.window_of(values)
    out = np.empty_like(values)
    for live_id, cb in enumerate(part.codebooks):
        mask = win == live_id
        if mask.any():
            out[mask] = cb.mu[np.argmax(assignment(cb, values[mask]), axis=1)]
    return out


def _ablate_prior(cfg, run) -> list[dict]:
    cfg = dict(cfg, dataset="classification")
    (Xtr, ytr), (Xte, yte) = make_data(cfg)
    out_dim = int(np.max(ytr)) + 1
    rows = []
    for prior in ("spike_slab", "gaussian"):
        net = trainer.init_mlp(Xtr.shape[1], _hidden_of(cfg), out_dim, seed=cfg["seed"])
        net = trainer.train_dense(net, (Xtr, ytr), "classification",
                                  lr=cfg["lr"], steps=cfg["dense_steps"],
                                  batch_size=cfg["batch_size"], seed=cfg["seed"])
        tc = train_config_of(dict(cfg, prior=prior))
        result = trainer.compress(net, (Xtr, ytr), tc, "classification")
        snap = inference.snapshot(result.model, tau=tc.tau,
                                  tau_prime=result.state.tau_prime)
        keep = inference.prune(snap, tc.target_nonzero)
        acc = _eval_metric(inference.predict_greedy(snap, Xte, keep=keep),
                           yte, "classification")
        rows.append({"prior": prior, "nonzero": tc.target_nonzero, "accuracy": acc})
    return rows


def _ablate_window(cfg, run) -> list[dict]:
    weights = datasets.gen_longtail_weights(100_000, 0.01, 1.0, seed=cfg["data_seed"])
    metrics.write_histogram_csv(run / "hist_full.csv",
                                metrics.export_histogram(weights, bins=100))
    rows = []
    for strategy in ("outlier", "equal"):
        part = partition_windows(weights, strategy, K=cfg["K"], tau=cfg["tau"],
                                 iqr_multiplier=cfg["iqr_multiplier"], seed=cfg["seed"])
        quant = _quantize_with_partition(part, weights)
        metrics.write_histogram_csv(run / f"hist_{strategy}.csv",
                                    metrics.export_histogram(quant, bins=100))
        rows.append({"strategy": strategy,
                     "tv_distance": metrics.histogram_tv(weights, quant, bins=100)})
    return rows


def _ablate_inference(cfg, run) -> list[dict]:
    cfg = dict(cfg, dataset="classification", target_nonzero=1.0)
    (Xtr, ytr), (Xte, yte) = make_data(cfg)
    out_dim = int(np.max(ytr)) + 1
    net = trainer.init_mlp(Xtr.shape[1], _hidden_of(cfg), out_dim, seed=cfg["seed"])
    net = trainer.train_dense(net, (Xtr, ytr), "classification",
                              lr=cfg["lr"], steps=cfg["dense_steps"],
                              batch_size=cfg["batch_size"], seed=cfg["seed"])
    base = _eval_metric(net.forward_batch(Xte), yte, "classification")
    rows = []
    for K in (2, 4, 8, 16):
        tc = train_config_of(dict(cfg, K=K))
        result = trainer.compress(net, (Xtr, ytr), tc, "classification")
        snap = inference.snapshot(result.model, tau=tc.tau,
                                  tau_prime=result.state.tau_prime)
        keep = inference.prune(snap, 1.0)
        greedy = _eval_metric(inference.predict_greedy(snap, Xte, keep=keep),
                              yte, "classification")
        rng = np.random.default_rng(cfg["seed"] + 1)
        bayes = _eval_metric(
            inference.predict_bayes(snap, Xte, cfg["samples"], rng, keep=keep),
            yte, "classification")
        rows.append({
            "K": K, "baseline": base,
            "greedy_drop": metrics.accuracy_drop(base, greedy),
            "bayes_drop": metrics.accuracy_drop(base, bayes),
        })
    return rows


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    cfg = resolve_config(args)
    run = _run_dir(args, f"ablate_{args.study}")
    studies = {"prior": _ablate_prior, "window": _ablate_window,
               "inference": _ablate_inference}
    if args.study not in studies:
        raise UsageError(f"unknown study {args.study!r}")
    rows = studies[args.study](cfg, run)
    write_metrics_csv(run / "metrics.csv", rows)
    flat = {f"row{i}.{k}": v for i, row in enumerate(rows) for k, v in row.items()}
    RunManifest(f"ablate --study {args.study}", cfg, {"metrics": str(run / "metrics.csv")},
                flat, time.perf_counter() - t0).write(run / "manifest.txt")
    if rows:
        keys = list(rows[0])
        print("  ".join(f"{k:>12}" for k in keys))
        for row in rows:
            print("  ".join(f"{row[k]:>12.4f}" if isinstance(row[k], float)
                            else f"{row[k]!s:>12}" for k in keys))
    return 0


# -- verify ---------------------------------------------------------------


def _suite_klbound(rng) -> tuple[int, int]:
    from .metrics import Mixture, mixture_kl_bound, mc_kl

    passed = total = 0
    for _ in range(40):
        K = rng.integers(1, 5)
        p = Mixture(np.full(K, 1.0 / K), rng.normal(0, 1, K), rng.uniform(0.3, 1.5, K))
        q = Mixture(np.full(K, 1.0 / K), rng.normal(0, 1, K), rng.uniform(0.3, 1.5, K))
        est, se = mc_kl(p, q, 100_000, rng)
        total += 1
        if mixture_kl_bound(p, q) >= est - 3.0 * se:
            passed += 1
    return passed, total


def _suite_gradient(rng) -> tuple[int, int]:
    from .metrics import fd_check
    from .objective import VariationalModel, objective

    passed = total = 0
    for trial in range(10):
        net = trainer.init_mlp(2, (3,), 1, seed=trial)
        model = VariationalModel.initialize(net, K=2, tau=0.5, seed=trial + 10)
        X = rng.uniform(0, 1, (4, 2))
        y = rng.normal(0, 1, 4)
        prior = "spike_slab" if trial % 2 == 0 else "gaussian"

        def closure(params):
            model.theta = params["theta"]
            model.s = params["s"]
            bd, grads = objective(model, (X, y), "regression", lambda_prior=0.4,
                                  sigma0_sq=1.0, tau=0.5, tau_prime=0.7,
                                  sigma_eps=0.5, prior=prior)
            return bd.total, {"theta": grads["theta"], "s": grads["s"]}

        err = fd_check(closure, {"theta": model.theta.copy(), "s": model.s.copy()},
                       h=1e-5)
        total += 1
        if err < 1e-4:
            passed += 1
    return passed, total


def _suite_codec(rng) -> tuple[int, int]:
    from .inference import CompressedLayer, CompressedModel

    passed = total = 0
    for _ in range(100):
        out, inp = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        T_l = out * inp + out
        C = int(rng.integers(1, 9))
        keep = rng.random(T_l) < 0.7
        n_live = int(keep.sum())
        cl = CompressedLayer(
            boundaries=rng.normal(0, 1, rng.integers(0, 4)),
            redirect=rng.integers(0, 1, 4 if rng.random() < 0.5 else 1).astype(np.int64),
            strategy="outlier" if rng.random() < 0.5 else "equal",
            window_K=[C],
            mu=rng.normal(0, 1, C).astype(np.float32),
            indices=rng.integers(0, C, n_live).astype(np.int64),
            keep=keep,
        )
        m = CompressedModel([(out, inp)], [cl], K=int(rng.integers(1, 17)),
                            nonzero=float(rng.uniform(0.1, 1.0)), seed=int(rng.integers(1 << 16)))
        total += 1
        try:
            m2 = codec.decode(codec.encode(m))
        except codec.CodecError:
            continue
        same = (
            m2.K == m.K and m2.nonzero == m.nonzero and m2.shapes == m.shapes
            and np.array_equal(m2.layers[0].indices, m.layers[0].indices)
            and np.array_equal(m2.layers[0].keep, m.layers[0].keep)
            and np.array_equal(m2.layers[0].mu, m.layers[0].mu)
        )
        if same:
            passed += 1
    return passed, total


def cmd_verify(args) -> int:
    suites = {"klbound": _suite_klbound, "gradient": _suite_gradient,
              "codec": _suite_codec}
    if args.suite:
        if args.suite not in suites:
            raise UsageError(f"unknown suite {args.suite!r}")
        suites = {args.suite: suites[args.suite]}
    rng = np.random.default_rng(args.seed or 0)
    failures = []
    rows = []
    for name, fn in suites.items():
        passed, total = fn(rng)
        rows.append({"suite": name, "passed": passed, "total": total})
        print(f"{name}: {passed}/{total}")
        if passed != total:
            failures.append(name)
    if getattr(args, "out", None):
        run = _run_dir(args, "verify")
        write_metrics_csv(run / "metrics.csv", rows)
        RunManifest("verify", {"suite": args.suite or "all", "seed": args.seed or 0},
                    {}, {r["suite"]: f"{r['passed']}/{r['total']}" for r in rows},
                    0.0).write(run / "manifest.txt")
    if failures:
        print("FAILED: " + ", ".join(failures))
        return 1
    return 0


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqs", description="joint pruning + quantization of MLP weights"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory (default runs/<command>)")

    p = sub.add_parser("train", help="pretrain a full-precision network")
    common(p)

    p = sub.add_parser("compress", help="compress a dense checkpoint")
    p.add_argument("checkpoint", help="dense.npz from `sqs train`")
    common(p)
    p.add_argument("--k", type=int, help="codebook size per window")
    p.add_argument("--nonzero", type=float, help="target nonzero fraction")
    p.add_argument("--window", choices=("equal", "outlier"))
    p.add_argument("--iqr-mult", type=float, dest="iqr_mult")

    p = sub.add_parser("eval", help="evaluate a compressed artifact")
    p.add_argument("model", help="model.sqz or snapshot.bin")
    common(p)
    p.add_argument("--mode", choices=("greedy", "bayes"))
    p.add_argument("--samples", type=int, help="forward passes for --mode bayes")
    p.add_argument("--k", type=int)
    p.add_argument("--nonzero", type=float)
    p.add_argument("--baseline", help="dense.npz for accuracy-drop reporting")

    p = sub.add_parser("ablate", help="paired comparison studies")
    p.add_argument("--study", required=True, choices=("prior", "window", "inference"))
    common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--nonzero", type=float)
    p.add_argument("--window", choices=("equal", "outlier"))
    p.add_argument("--iqr-mult", type=float, dest="iqr_mult")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("verify", help="run the built-in oracle suites")
    p.add_argument("--suite", choices=("klbound", "gradient", "codec"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    return parser


_COMMANDS = {
    "train": cmd_train,
    "compress": cmd_compress,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError, datasets.DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (trainer.TrainingDiverged, codec.CodecError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
