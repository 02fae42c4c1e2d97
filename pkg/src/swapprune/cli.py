"""Command-line front end: config files, subcommands, report writers.

Configuration values resolve flag > config file > built-in default.  All
report numbers are printed with six significant digits in fixed notation so
repeated runs of the same configuration produce byte-identical files; the
per-seed comparison fan-out honors the ``SWAP_THREADS`` environment variable
without affecting results.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from swapprune import matio, nets, pruning
from swapprune.regression import EwrConfig
from swapprune.transport import hull_equality_witness

__all__ = ["RunConfig", "ConfigError", "fmt6", "main", "parse_config"]


class ConfigError(ValueError):
    """Raised for unparseable or out-of-range configuration."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "blobs"
    seed: int = 7
    samples: int = 1000
    dim: int = 20
    classes: int = 5
    spread: float = 0.3
    train_path: str = ""
    test_path: str = ""
    train_labels_path: str = ""
    test_labels_path: str = ""


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 80
    lr: float = 0.2
    seed: int = 1
    batch_size: int = 32


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "exponential"
    start: float = 0.0
    target: float = 0.95
    stages: int = 10


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI run needs; mirrors the JSON config file."""

    task: TaskSpec = field(default_factory=TaskSpec)
    hidden: tuple[int, ...] = (64,)
    activation: str = "relu"
    train: TrainSpec = field(default_factory=TrainSpec)
    lam: float = 0.01
    epsilon: float = 1.0
    plan: str = "sinkhorn"
    sinkhorn_tol: float = 1e-9
    max_iter: int = 10000
    cross_covariance: str = "box"
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    noise_fraction: float = 0.0
    noise_level: float = 1.0
    noise_seed: int = 0
    fisher_samples: int = 100
    seeds: tuple[int, ...] = tuple(range(10))
    inner_steps: int = 1
    freeze_reference: bool = False
    confidence: float = 0.90
    out: str = "out"
    format: str = "csv"


_CONFIG_KEYS = {
    "task", "hidden", "activation", "train", "lambda", "epsilon", "plan",
    "sinkhorn_tol", "max_iter", "cross_covariance", "schedule",
    "noise", "fisher_samples", "seeds", "inner_steps", "freeze_reference",
    "confidence", "out", "format",
}


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _build_task(raw: dict) -> TaskSpec:
    _require(isinstance(raw, dict), f"task must be an object, got {type(raw).__name__}")
    kind = raw.get("kind", "blobs")
    _require(kind in ("blobs", "csv", "idx"),
             f"task.kind must be one of blobs, csv, idx; got {kind!r}")
    spec = TaskSpec(
        kind=kind,
        seed=int(raw.get("seed", 7)),
        samples=int(raw.get("samples", 1000)),
        dim=int(raw.get("dim", 20)),
        classes=int(raw.get("classes", 5)),
        spread=float(raw.get("spread", 0.3)),
        train_path=str(raw.get("train_path", "")),
        test_path=str(raw.get("test_path", "")),
        train_labels_path=str(raw.get("train_labels_path", "")),
        test_labels_path=str(raw.get("test_labels_path", "")),
    )
    if kind == "blobs":
        _require(spec.samples >= spec.classes >= 2,
                 f"task.samples must be >= task.classes >= 2, got {spec.samples}, {spec.classes}")
        _require(spec.dim >= 1, f"task.dim must be >= 1, got {spec.dim}")
        _require(spec.spread >= 0, f"task.spread must be >= 0, got {spec.spread}")
    else:
        _require(bool(spec.train_path) and bool(spec.test_path),
                 f"task.kind {kind!r} needs train_path and test_path")
        if kind == "idx":
            _require(bool(spec.train_labels_path) and bool(spec.test_labels_path),
                     "task.kind 'idx' needs train_labels_path and test_labels_path")
    return spec


def config_from_dict(raw: dict) -> RunConfig:
    _require(isinstance(raw, dict), "config root must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")

    defaults = RunConfig()
    task = _build_task(raw.get("task", {}))

    train_raw = raw.get("train", {})
    _require(isinstance(train_raw, dict), "train must be an object")
    train = TrainSpec(
        epochs=int(train_raw.get("epochs", defaults.train.epochs)),
        lr=float(train_raw.get("lr", defaults.train.lr)),
        seed=int(train_raw.get("seed", defaults.train.seed)),
        batch_size=int(train_raw.get("batch_size", defaults.train.batch_size)),
    )
    _require(train.epochs >= 0, f"train.epochs must be >= 0, got {train.epochs}")
    _require(train.lr > 0, f"train.lr must be > 0, got {train.lr}")
    _require(train.batch_size >= 1, f"train.batch_size must be >= 1, got {train.batch_size}")

    sched_raw = raw.get("schedule", {})
    _require(isinstance(sched_raw, dict), "schedule must be an object")
    schedule = ScheduleSpec(
        kind=str(sched_raw.get("kind", defaults.schedule.kind)),
        start=float(sched_raw.get("start", defaults.schedule.start)),
        target=float(sched_raw.get("target", defaults.schedule.target)),
        stages=int(sched_raw.get("stages", defaults.schedule.stages)),
    )
    _require(schedule.kind in ("exponential", "linear"),
             f"schedule.kind must be exponential or linear, got {schedule.kind!r}")
    _require(0.0 <= schedule.start <= 1.0,
             f"schedule.start must lie in [0, 1], got {schedule.start}")
    _require(0.0 <= schedule.target <= 1.0,
             f"schedule.target must lie in [0, 1], got {schedule.target}")
    _require(schedule.target >= schedule.start,
             f"schedule.target must be >= schedule.start, got {schedule.target} < {schedule.start}")
    _require(schedule.stages >= 1, f"schedule.stages must be >= 1, got {schedule.stages}")

    noise_raw = raw.get("noise", {})
    _require(isinstance(noise_raw, dict), "noise must be an object")
    noise_fraction = float(noise_raw.get("fraction", defaults.noise_fraction))
    noise_level = float(noise_raw.get("level", defaults.noise_level))
    noise_seed = int(noise_raw.get("cal_seed", defaults.noise_seed))
    _require(0.0 <= noise_fraction <= 1.0,
             f"noise.fraction must lie in [0, 1], got {noise_fraction}")
    _require(noise_level > 0, f"noise.level must be > 0, got {noise_level}")

    hidden = raw.get("hidden", list(defaults.hidden))
    _require(isinstance(hidden, (list, tuple)), "hidden must be a list of layer widths")
    hidden = tuple(int(h) for h in hidden)
    _require(all(h >= 1 for h in hidden), f"hidden widths must be >= 1, got {hidden}")

    seeds = raw.get("seeds", list(defaults.seeds))
    _require(isinstance(seeds, (list, tuple)) and len(seeds) > 0,
             "seeds must be a nonempty list of integers")
    seeds = tuple(int(s) for s in seeds)

    lam = float(raw.get("lambda", defaults.lam))
    _require(lam >= 0, f"lambda must be >= 0, got {lam}")
    epsilon = float(raw.get("epsilon", defaults.epsilon))
    _require(epsilon >= 0, f"epsilon must be >= 0, got {epsilon}")
    plan = str(raw.get("plan", defaults.plan))
    _require(plan in ("sinkhorn", "closed-form", "diagonal", "uniform"),
             f"plan must be one of sinkhorn, closed-form, diagonal, uniform; got {plan!r}")
    _require(epsilon > 0 or plan in ("diagonal", "uniform"),
             f"epsilon must be > 0 for plan {plan!r}, got {epsilon}")
    sinkhorn_tol = float(raw.get("sinkhorn_tol", defaults.sinkhorn_tol))
    _require(sinkhorn_tol > 0, f"sinkhorn_tol must be > 0, got {sinkhorn_tol}")
    max_iter = int(raw.get("max_iter", defaults.max_iter))
    _require(max_iter >= 1, f"max_iter must be >= 1, got {max_iter}")
    cross_covariance = str(raw.get("cross_covariance", defaults.cross_covariance))
    _require(cross_covariance in ("box", "shifted"),
             f"cross_covariance must be box or shifted, got {cross_covariance!r}")
    fisher_samples = int(raw.get("fisher_samples", defaults.fisher_samples))
    _require(fisher_samples >= 1, f"fisher_samples must be >= 1, got {fisher_samples}")
    inner_steps = int(raw.get("inner_steps", defaults.inner_steps))
    _require(inner_steps >= 1, f"inner_steps must be >= 1, got {inner_steps}")
    confidence = float(raw.get("confidence", defaults.confidence))
    _require(0.0 < confidence < 1.0,
             f"confidence must lie in (0, 1), got {confidence}")
    fmt = str(raw.get("format", defaults.format))
    _require(fmt in ("csv", "json", "both"),
             f"format must be csv, json, or both; got {fmt!r}")

    return RunConfig(
        task=task,
        hidden=hidden,
        activation=str(raw.get("activation", defaults.activation)),
        train=train,
        lam=lam,
        epsilon=epsilon,
        plan=plan,
        sinkhorn_tol=sinkhorn_tol,
        max_iter=max_iter,
        cross_covariance=cross_covariance,
        schedule=schedule,
        noise_fraction=noise_fraction,
        noise_level=noise_level,
        noise_seed=noise_seed,
        fisher_samples=fisher_samples,
        seeds=seeds,
        inner_steps=inner_steps,
        freeze_reference=bool(raw.get("freeze_reference", defaults.freeze_reference)),
        confidence=confidence,
        out=str(raw.get("out", defaults.out)),
        format=fmt,
    )


def config_to_dict(cfg: RunConfig) -> dict:
    """Inverse of :func:`config_from_dict` (round-trips to an equal config)."""
    return {
        "task": {k: v for k, v in asdict(cfg.task).items()},
        "hidden": list(cfg.hidden),
        "activation": cfg.activation,
        "train": asdict(cfg.train),
        "lambda": cfg.lam,
        "epsilon": cfg.epsilon,
        "plan": cfg.plan,
        "sinkhorn_tol": cfg.sinkhorn_tol,
        "max_iter": cfg.max_iter,
        "cross_covariance": cfg.cross_covariance,
        "schedule": asdict(cfg.schedule),
        "noise": {
            "fraction": cfg.noise_fraction,
            "level": cfg.noise_level,
            "cal_seed": cfg.noise_seed,
        },
        "fisher_samples": cfg.fisher_samples,
        "seeds": list(cfg.seeds),
        "inner_steps": cfg.inner_steps,
        "freeze_reference": cfg.freeze_reference,
        "confidence": cfg.confidence,
        "out": cfg.out,
        "format": cfg.format,
    }


def parse_config(source: str) -> RunConfig:
    """Parse a config from a file path or inline JSON text."""
    text = source
    label = "<inline>"
    if not source.lstrip().startswith("{"):
        if not os.path.exists(source):
            raise ConfigError(f"config file not found: {source}")
        with open(source) as f:
            text = f.read()
        label = source
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{label}: syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Formatting and writers
# ---------------------------------------------------------------------------


def fmt6(x: float) -> str:
    """Six significant digits, fixed (positional) notation, never scientific."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:
        return "0.00000"
    out = np.format_float_positional(
        x, precision=6, unique=False, fractional=False, trim="k"
    )
    return out[:-1] if out.endswith(".") else out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def write_compare_report(out_dir, report: pruning.CompareReport, fmt: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        path = os.path.join(out_dir, "compare.csv")
        _write_csv(
            path,
            ["sparsity", "lr_loss", "lr_ci", "ewr_loss", "ewr_ci",
             "diff_percent", "lr_acc", "ewr_acc", "seeds"],
            [
                [fmt6(a.sparsity), fmt6(a.lr_loss), fmt6(a.lr_ci), fmt6(a.ewr_loss),
                 fmt6(a.ewr_ci), fmt6(a.diff_percent), fmt6(a.lr_accuracy),
                 fmt6(a.ewr_accuracy), a.seeds]
                for a in report.aggregates
            ],
        )
        written.append(path)
    if fmt in ("json", "both", "csv"):
        # The JSON mirror always ships with the CSV: it carries the per-seed
        # rows and states the diff formula explicitly.
        path = os.path.join(out_dir, "compare.json")
        _write_json(path, {
            "diff_formula": pruning.CompareReport.DIFF_FORMULA,
            "confidence": report.confidence,
            "aggregates": [asdict(a) for a in report.aggregates],
            "rows": [asdict(r) for r in report.rows],
        })
        written.append(path)
    return written


def write_errors_sidecar(out_dir, errors: list[tuple[str, str]]) -> str:
    path = os.path.join(out_dir, "errors.txt")
    with open(path, "w") as f:
        for unit, message in errors:
            f.write(f"{unit}: {message}\n")
    return path


# ---------------------------------------------------------------------------
# Task assembly
# ---------------------------------------------------------------------------


def load_task_dataset(spec: TaskSpec) -> nets.Dataset:
    if spec.kind == "blobs":
        return nets.synth_dataset(spec.seed, spec.samples, spec.dim, spec.classes,
                                  spec.spread)
    if spec.kind == "csv":
        train = nets.load_csv_split(spec.train_path)
        test = nets.load_csv_split(spec.test_path)
    else:
        train = nets.Split(
            nets.load_idx_images(spec.train_path),
            nets.load_idx_labels(spec.train_labels_path),
        )
        test = nets.Split(
            nets.load_idx_images(spec.test_path),
            nets.load_idx_labels(spec.test_labels_path),
        )
    classes = int(max(train.labels.max(), test.labels.max())) + 1
    return nets.Dataset(train=train, test=test, num_classes=classes)


def build_trained_task(cfg: RunConfig) -> pruning.PruneTask:
    data = load_task_dataset(cfg.task)
    dims = (data.train.features.shape[1], *cfg.hidden, data.num_classes)
    net = nets.init_mlp(dims, cfg.activation, seed=cfg.train.seed)
    net = nets.train(net, data.train, cfg.train.epochs, cfg.train.lr,
                     seed=cfg.train.seed, batch_size=cfg.train.batch_size)
    return pruning.PruneTask(mlp=net, data=data, fisher_samples=cfg.fisher_samples)


def ewr_config(cfg: RunConfig, plan: str | None = None,
               epsilon: float | None = None) -> EwrConfig:
    return EwrConfig(
        lam=cfg.lam,
        epsilon=cfg.epsilon if epsilon is None else epsilon,
        plan_solver=cfg.plan if plan is None else plan,
        sinkhorn_tol=cfg.sinkhorn_tol,
        max_iter=cfg.max_iter,
        inner_steps=cfg.inner_steps,
        freeze_reference=cfg.freeze_reference,
        cross_covariance=cfg.cross_covariance,
    )


def noise_spec(cfg: RunConfig) -> nets.NoiseSpec | None:
    if cfg.noise_fraction == 0.0:
        return None
    return nets.NoiseSpec(cfg.noise_fraction, cfg.noise_level, cfg.noise_seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> int:
    data = load_task_dataset(cfg.task)
    os.makedirs(cfg.out, exist_ok=True)
    train_path = os.path.join(cfg.out, "train.csv")
    test_path = os.path.join(cfg.out, "test.csv")
    nets.save_csv_split(train_path, data.train)
    nets.save_csv_split(test_path, data.test)
    print(f"wrote {train_path} ({len(data.train)} rows) and "
          f"{test_path} ({len(data.test)} rows)")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    task = build_trained_task(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "weights.json")
    matio.save_weights(path, task.mlp.layer_dims, task.mlp.flat_weights,
                       task.mlp.activation)
    result = nets.evaluate(task.mlp, task.data.test)
    print(f"trained {task.mlp.layer_dims}: test loss {fmt6(result.loss)}, "
          f"accuracy {fmt6(result.accuracy)}")
    print(f"wrote {path}")
    return 0


def cmd_prune(cfg: RunConfig, weights_path: str | None = None) -> int:
    data = load_task_dataset(cfg.task)
    if weights_path:
        dims, flat, activation = matio.load_weights(weights_path)
        net = nets.TinyMlp(dims, flat, activation)
        task = pruning.PruneTask(mlp=net, data=data,
                                 fisher_samples=cfg.fisher_samples)
    else:
        task = build_trained_task(cfg)
    schedule = pruning.make_schedule(cfg.schedule.kind, cfg.schedule.start,
                                     cfg.schedule.target, cfg.schedule.stages,
                                     task.mlp.flat_weights.size)
    runs = pruning.run_pruning_runs(task, schedule, ewr_config(cfg),
                                    seeds=[cfg.seeds[0]], noise=noise_spec(cfg))
    result = runs[0]
    os.makedirs(cfg.out, exist_ok=True)
    stages_path = os.path.join(cfg.out, "stages.csv")
    _write_csv(
        stages_path,
        ["stage", "nonzeros", "sparsity", "train_loss", "test_loss", "accuracy",
         "plan_iterations", "plan_residual"],
        [
            [s.stage, s.nonzeros, fmt6(s.sparsity), fmt6(s.train_loss),
             fmt6(s.test_loss), fmt6(s.accuracy), s.plan_iterations,
             fmt6(s.plan_residual)]
            for s in result.stages
        ],
    )
    weights_out = os.path.join(cfg.out, "pruned_weights.json")
    matio.save_weights(weights_out, task.mlp.layer_dims, result.final_weights,
                       task.mlp.activation)
    last = result.stages[-1]
    print(f"pruned to {last.nonzeros} nonzeros (sparsity {fmt6(last.sparsity)}): "
          f"test loss {fmt6(last.test_loss)}, accuracy {fmt6(last.accuracy)}")
    print(f"wrote {stages_path} and {weights_out}")
    return 0


def _fan_out_seeds(cfg: RunConfig, worker):
    """Run ``worker(seed)`` per seed on a pool; collect errors in seed order."""
    workers = pruning.resolve_workers(None)
    results, errors = [], []
    if workers == 1 or len(cfg.seeds) == 1:
        outcomes = []
        for seed in cfg.seeds:
            try:
                outcomes.append((seed, worker(seed), None))
            except Exception as exc:  # noqa: BLE001 - reported in the sidecar
                outcomes.append((seed, None, f"{type(exc).__name__}: {exc}"))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(seed, pool.submit(worker, seed)) for seed in cfg.seeds]
            outcomes = []
            for seed, fut in futures:
                try:
                    outcomes.append((seed, fut.result(), None))
                except Exception as exc:  # noqa: BLE001
                    outcomes.append((seed, None, f"{type(exc).__name__}: {exc}"))
    for seed, value, err in outcomes:
        if err is None:
            results.append(value)
        else:
            errors.append((f"seed {seed}", err))
    return results, errors


def cmd_compare(cfg: RunConfig) -> int:
    task = build_trained_task(cfg)
    schedule = pruning.make_schedule(cfg.schedule.kind, cfg.schedule.start,
                                     cfg.schedule.target, cfg.schedule.stages,
                                     task.mlp.flat_weights.size)
    cfg_lr = ewr_config(cfg, plan="diagonal")
    cfg_ewr = ewr_config(cfg)
    noise = noise_spec(cfg)

    def worker(seed):
        return pruning.compare_single_seed(task, schedule, cfg_lr, cfg_ewr,
                                           seed, noise)

    per_seed, errors = _fan_out_seeds(cfg, worker)
    rows = [row for seed_rows in per_seed for row in seed_rows]
    os.makedirs(cfg.out, exist_ok=True)
    if rows:
        report = pruning.CompareReport(
            tuple(rows),
            tuple(pruning.aggregate_rows(rows, schedule.fractions, cfg.confidence)),
            cfg.confidence,
        )
        written = write_compare_report(cfg.out, report, cfg.format)
        print(pruning.CompareReport.DIFF_FORMULA)
        final = report.aggregates[-1]
        print(f"sparsity {fmt6(final.sparsity)}: lr {fmt6(final.lr_loss)} vs "
              f"ewr {fmt6(final.ewr_loss)} ({fmt6(final.diff_percent)}% diff, "
              f"{final.seeds} seeds)")
        for path in written:
            print(f"wrote {path}")
    if errors:
        sidecar = write_errors_sidecar(cfg.out, errors)
        print(f"{len(errors)} of {len(cfg.seeds)} runs failed; see {sidecar}",
              file=sys.stderr)
        return 2
    return 0


def parse_epsilon_token(token: str) -> tuple[str, float]:
    """Map a sweep token to (plan, epsilon): 0 -> diagonal, inf -> uniform."""
    token = token.strip()
    if token.lower() in ("inf", "infinity"):
        return "uniform", float("inf")
    try:
        value = float(token)
    except ValueError:
        raise ConfigError(f"bad epsilon token {token!r}; use a number or 'inf'")
    if value < 0:
        raise ConfigError(f"epsilon must be >= 0, got {value}")
    if value == 0.0:
        return "diagonal", 0.0
    return "", value


def cmd_sweep_epsilon(cfg: RunConfig, tokens: list[str]) -> int:
    if not tokens:
        raise ConfigError("sweep-epsilon needs at least one epsilon token")
    parsed = [(tok, *parse_epsilon_token(tok)) for tok in tokens]
    task = build_trained_task(cfg)
    schedule = pruning.make_schedule(cfg.schedule.kind, cfg.schedule.start,
                                     cfg.schedule.target, cfg.schedule.stages,
                                     task.mlp.flat_weights.size)
    noise = noise_spec(cfg)

    all_rows = []
    errors = []
    for token, plan, eps in parsed:
        if plan:
            cfg_eps = ewr_config(cfg, plan=plan, epsilon=1.0)
        else:
            cfg_eps = ewr_config(cfg, epsilon=eps)

        def worker(seed, cfg_eps=cfg_eps):
            return pruning.run_pruning_runs(task, schedule, cfg_eps, [seed],
                                            noise=noise, max_workers=1)[0]

        results, errs = _fan_out_seeds(cfg, worker)
        errors.extend((f"epsilon {token} {unit}", msg) for unit, msg in errs)
        if not results:
            continue
        for t in range(schedule.stages):
            losses = np.array([r.stages[t].test_loss for r in results])
            all_rows.append((
                token,
                schedule.fractions[t],
                float(losses.mean()),
                pruning.t_half_width(losses, cfg.confidence),
                len(results),
            ))

    os.makedirs(cfg.out, exist_ok=True)
    if all_rows:
        csv_path = os.path.join(cfg.out, "sweep.csv")
        _write_csv(
            csv_path,
            ["epsilon", "sparsity", "ewr_loss", "ewr_ci", "seeds"],
            [[tok, fmt6(frac), fmt6(loss), fmt6(ci), s]
             for tok, frac, loss, ci, s in all_rows],
        )
        json_path = os.path.join(cfg.out, "sweep.json")
        _write_json(json_path, {
            "confidence": cfg.confidence,
            "rows": [
                {"epsilon": tok, "sparsity": frac, "ewr_loss": loss,
                 "ewr_ci": ci, "seeds": s}
                for tok, frac, loss, ci, s in all_rows
            ],
        })
        print(f"wrote {csv_path} and {json_path}")
    if errors:
        sidecar = write_errors_sidecar(cfg.out, errors)
        print(f"{len(errors)} runs failed; see {sidecar}", file=sys.stderr)
        return 2
    return 0


def cmd_witness(instances: int, dim_max: int, points_max: int, seed: int,
                tol: float) -> int:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(1, dim_max + 1))
        m = int(rng.integers(1, points_max + 1))
        x = rng.standard_normal(d)
        pts = rng.standard_normal((m, d))
        w_hat = rng.random(m)
        w_hat /= w_hat.sum()
        nu = hull_equality_witness(x, pts, w_hat, tol=tol)
        target = float(w_hat @ ((x[None, :] - pts) ** 2).sum(axis=1))
        diff = x - nu @ pts
        worst = max(worst, abs(float(diff @ diff) - target))
    print(f"{instances} witness instances, max residual {worst:.3e} "
          f"(tolerance {tol:.1e})")
    return 0 if worst <= tol else 1


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file or inline JSON")
    sub.add_argument("--epsilon", type=float, default=None)
    sub.add_argument("--lambda", dest="lam", type=float, default=None)
    sub.add_argument("--sparsity", type=float, default=None,
                     help="target sparsity fraction")
    sub.add_argument("--stages", type=int, default=None)
    sub.add_argument("--schedule", choices=["exponential", "linear"], default=None)
    sub.add_argument("--plan", choices=["sinkhorn", "closed-form", "diagonal",
                                        "uniform"], default=None)
    sub.add_argument("--noise-frac", type=float, default=None)
    sub.add_argument("--noise-level", type=float, default=None)
    sub.add_argument("--seeds", default=None,
                     help="comma-separated list, e.g. 0,1,2")
    sub.add_argument("--out", default=None)
    sub.add_argument("--format", choices=["csv", "json", "both"], default=None)
    sub.add_argument("--freeze-reference", choices=["true", "false"], default=None)
    sub.add_argument("--inner-steps", type=int, default=None)


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Flags win over config values; untouched flags leave the config alone."""
    updates = {}
    if args.epsilon is not None:
        _require(args.epsilon >= 0, f"epsilon must be >= 0, got {args.epsilon}")
        updates["epsilon"] = args.epsilon
    if args.lam is not None:
        _require(args.lam >= 0, f"lambda must be >= 0, got {args.lam}")
        updates["lam"] = args.lam
    if args.plan is not None:
        updates["plan"] = args.plan
    if args.noise_frac is not None:
        _require(0.0 <= args.noise_frac <= 1.0,
                 f"noise-frac must lie in [0, 1], got {args.noise_frac}")
        updates["noise_fraction"] = args.noise_frac
    if args.noise_level is not None:
        _require(args.noise_level > 0,
                 f"noise-level must be > 0, got {args.noise_level}")
        updates["noise_level"] = args.noise_level
    if args.seeds is not None:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError:
            raise ConfigError(f"bad --seeds value {args.seeds!r}")
        _require(len(seeds) > 0, "--seeds must name at least one seed")
        updates["seeds"] = seeds
    if args.out is not None:
        updates["out"] = args.out
    if args.format is not None:
        updates["format"] = args.format
    if args.freeze_reference is not None:
        updates["freeze_reference"] = args.freeze_reference == "true"
    if args.inner_steps is not None:
        _require(args.inner_steps >= 1,
                 f"inner-steps must be >= 1, got {args.inner_steps}")
        updates["inner_steps"] = args.inner_steps
    sched_updates = {}
    if args.sparsity is not None:
        _require(0.0 <= args.sparsity <= 1.0,
                 f"sparsity must lie in [0, 1], got {args.sparsity}")
        sched_updates["target"] = args.sparsity
    if args.stages is not None:
        _require(args.stages >= 1, f"stages must be >= 1, got {args.stages}")
        sched_updates["stages"] = args.stages
    if args.schedule is not None:
        sched_updates["kind"] = args.schedule
    if sched_updates:
        updates["schedule"] = replace(cfg.schedule, **sched_updates)
    cfg = replace(cfg, **updates) if updates else cfg
    # Re-validate cross-field constraints after overrides.
    return config_from_dict(config_to_dict(cfg))


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    return _apply_flags(cfg, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swapprune",
        description="Transport-plan-weighted sparse regression pruning toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("gen-data", "generate the synthetic blob dataset as CSV"),
        ("train", "train the dense reference network"),
        ("prune", "run one staged pruning pass"),
        ("compare", "run the seeded diagonal-vs-transported comparison"),
        ("sweep-epsilon", "compare regularization strengths"),
    ]:
        sub = subs.add_parser(name, help=help_text)
        _add_common_flags(sub)
        if name == "prune":
            sub.add_argument("--weights", default=None,
                             help="weights JSON from the train command")
        if name == "sweep-epsilon":
            sub.add_argument("--epsilons", required=True,
                             help="comma-separated values; 0 maps to the "
                                  "diagonal plan, inf to the uniform plan")

    wit = subs.add_parser("witness",
                          help="check the hull distance-interpolation witness")
    wit.add_argument("--instances", type=int, default=1000)
    wit.add_argument("--dim-max", type=int, default=5)
    wit.add_argument("--points-max", type=int, default=8)
    wit.add_argument("--seed", type=int, default=0)
    wit.add_argument("--tol", type=float, default=1e-8)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "witness":
            return cmd_witness(args.instances, args.dim_max, args.points_max,
                               args.seed, args.tol)
        cfg = _resolve_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "prune":
            return cmd_prune(cfg, weights_path=args.weights)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "sweep-epsilon":
            return cmd_sweep_epsilon(cfg, args.epsilons.split(","))
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
