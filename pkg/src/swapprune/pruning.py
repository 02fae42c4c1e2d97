"""Staged magnitude pruning driven by plan-weighted regression.

A run walks a sparsity schedule; at each stage it draws a fresh per-sample
gradient matrix, solves for a transport plan between the current and
reference projections, takes one or more regression gradient steps, and
hard-thresholds to the stage's nonzero budget.  The comparison harness runs
the same seeded batches and noise through the diagonal-plan (classic sparse
regression) and transported-plan pipelines and aggregates the test-loss gap
over seeds.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from swapprune import nets
from swapprune.regression import EwrConfig, ewr_gradient, iht_project, step_size
from swapprune.transport import (
    TransportPlan,
    build_cost_matrix,
    closed_form_plan,
    fixed_plan,
    sinkhorn_plan,
)

__all__ = [
    "AggregateRow",
    "CompareReport",
    "CompareRow",
    "PruneError",
    "PruneResult",
    "PruneTask",
    "SparsitySchedule",
    "StageRecord",
    "aggregate_rows",
    "compare_lr_ewr",
    "compare_single_seed",
    "exponential_schedule",
    "linear_schedule",
    "make_schedule",
    "run_pruning_runs",
    "solve_plan",
    "swap_prune",
]

#: Environment variable capping the comparison worker pool.
THREADS_ENV = "SWAP_THREADS"


class PruneError(RuntimeError):
    """Raised when a pruning stage cannot complete (solver failure etc.)."""


# ---------------------------------------------------------------------------
# Sparsity schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparsitySchedule:
    """Per-stage sparsity fractions and the matching nonzero budgets.

    ``fractions[t]`` is the scheduled fraction of zeroed weights after stage
    ``t``; ``counts[t]`` the corresponding nonzero budget out of
    ``num_params``, rounded half-up and clamped so budgets never increase.
    """

    fractions: tuple[float, ...]
    counts: tuple[int, ...]
    kind: str
    num_params: int

    def __post_init__(self) -> None:
        if len(self.fractions) != len(self.counts) or not self.counts:
            raise ValueError("fractions and counts must be nonempty and equal length")
        if any(later > earlier for earlier, later in zip(self.counts, self.counts[1:])):
            raise ValueError("nonzero budgets must be non-increasing")

    @property
    def stages(self) -> int:
        return len(self.counts)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _fractions_to_schedule(fractions, kind: str, num_params: int) -> SparsitySchedule:
    if num_params < 1:
        raise ValueError(f"num_params must be >= 1, got {num_params}")
    counts = []
    for frac in fractions:
        k = _round_half_up((1.0 - frac) * num_params)
        if counts:
            k = min(k, counts[-1])
        counts.append(k)
    return SparsitySchedule(tuple(float(f) for f in fractions), tuple(counts), kind, num_params)


def _check_endpoints(start: float, target: float, stages: int) -> None:
    if not 0.0 <= start <= 1.0 or not 0.0 <= target <= 1.0:
        raise ValueError(f"sparsity fractions must lie in [0, 1], got {start}, {target}")
    if target < start:
        raise ValueError(f"target sparsity {target} below start {start}")
    if stages < 1:
        raise ValueError(f"stages must be >= 1, got {stages}")


def exponential_schedule(
    start: float, target: float, stages: int, num_params: int
) -> SparsitySchedule:
    """Cubic ramp ``target + (start - target) * (1 - t / stages)**3``.

    Spends most stages near the target sparsity; fraction index ``t`` runs 0
    through ``stages`` inclusive.
    """
    _check_endpoints(start, target, stages)
    ts = np.arange(stages + 1, dtype=float)
    fracs = target + (start - target) * (1.0 - ts / stages) ** 3
    return _fractions_to_schedule(fracs, "exponential", num_params)


def linear_schedule(
    start: float, target: float, stages: int, num_params: int
) -> SparsitySchedule:
    """Evenly spaced sparsity fractions from ``start`` to ``target``."""
    _check_endpoints(start, target, stages)
    fracs = np.linspace(start, target, stages + 1)
    return _fractions_to_schedule(fracs, "linear", num_params)


def make_schedule(kind: str, start: float, target: float, stages: int,
                  num_params: int) -> SparsitySchedule:
    if kind == "exponential":
        return exponential_schedule(start, target, stages, num_params)
    if kind == "linear":
        return linear_schedule(start, target, stages, num_params)
    raise ValueError(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# The staged pruning loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageRecord:
    stage: int
    nonzeros: int
    sparsity: float
    train_loss: float
    test_loss: float
    accuracy: float
    plan_iterations: int
    plan_residual: float
    seconds: float


@dataclass(frozen=True)
class PruneResult:
    final_weights: np.ndarray
    stages: tuple[StageRecord, ...]


def solve_plan(cfg: EwrConfig, xs: np.ndarray, ys: np.ndarray) -> TransportPlan:
    """Dispatch on the configured plan solver for one stage's projections."""
    n = xs.shape[0]
    if cfg.plan_solver == "diagonal":
        return fixed_plan("diagonal", n)
    if cfg.plan_solver == "uniform":
        return fixed_plan("uniform", n)
    if cfg.plan_solver == "closed-form":
        return closed_form_plan(
            xs, ys, cfg.epsilon,
            cross_covariance=cfg.cross_covariance,
            tol=cfg.sinkhorn_tol, max_iter=cfg.max_iter,
        )
    unif = np.full(n, 1.0 / n)
    return sinkhorn_plan(
        build_cost_matrix(xs, ys), unif, unif, cfg.epsilon,
        tol=cfg.sinkhorn_tol, max_iter=cfg.max_iter,
    )


def swap_prune(
    gradient_provider: Callable[[int, np.ndarray], np.ndarray],
    wbar0: np.ndarray,
    schedule: SparsitySchedule,
    cfg: EwrConfig,
    eval_fn: Callable[[np.ndarray], tuple[float, float, float]] | None = None,
) -> PruneResult:
    """Run the staged prune-by-regression loop.

    Args:
        gradient_provider: called once per stage as ``provider(stage, wbar)``
            and must return a fresh per-sample gradient matrix ``(n, p)``.
        wbar0: initial reference weights, length ``num_params`` of the
            schedule.
        schedule: per-stage nonzero budgets.
        cfg: solver and loop settings; ``cfg.freeze_reference`` keeps the
            reference at ``wbar0``, otherwise it re-anchors to each stage's
            pruned weights.
        eval_fn: optional callback mapping weights to ``(train_loss,
            test_loss, accuracy)`` recorded per stage.

    Returns:
        Final weights and per-stage records.
    """
    wbar0 = np.asarray(wbar0, dtype=float)
    if wbar0.ndim != 1 or wbar0.size != schedule.num_params:
        raise ValueError(
            f"wbar0 must be 1-D with {schedule.num_params} entries, got shape {wbar0.shape}"
        )
    w = wbar0.copy()
    wbar = wbar0.copy()
    records = []
    for t, k in enumerate(schedule.counts):
        tick = time.perf_counter()
        G = np.asarray(gradient_provider(t, wbar), dtype=float)
        if G.ndim != 2 or G.shape[1] != wbar0.size:
            raise PruneError(
                f"stage {t}: provider returned shape {G.shape}, expected (n, {wbar0.size})"
            )
        plan_iters, plan_res = 0, 0.0
        try:
            tau = step_size(G, cfg.lam)
            for _ in range(cfg.inner_steps):
                plan = solve_plan(cfg, G @ w, G @ wbar)
                plan_iters, plan_res = plan.iterations, plan.residual
                w = w - tau * ewr_gradient(G, w, wbar, plan, cfg.lam)
        except (ValueError, RuntimeError) as exc:
            raise PruneError(f"stage {t}: plan solver failed: {exc}") from exc
        w = iht_project(w, k)
        if not cfg.freeze_reference:
            wbar = w.copy()
        if eval_fn is not None:
            train_loss, test_loss, acc = eval_fn(w)
        else:
            train_loss = test_loss = acc = float("nan")
        records.append(StageRecord(
            stage=t,
            nonzeros=k,
            sparsity=schedule.fractions[t],
            train_loss=train_loss,
            test_loss=test_loss,
            accuracy=acc,
            plan_iterations=plan_iters,
            plan_residual=plan_res,
            seconds=time.perf_counter() - tick,
        ))
    return PruneResult(w, tuple(records))


# ---------------------------------------------------------------------------
# Seeded two-pipeline comparison
# ---------------------------------------------------------------------------

_BATCH_STREAM = 0x5EED
_NOISE_STREAM = 0xA0DE


@dataclass(frozen=True)
class PruneTask:
    """A trained model plus the data it was trained on."""

    mlp: nets.TinyMlp
    data: nets.Dataset
    fisher_samples: int = 100


def _noise_subseed(cal_seed: int, run_seed: int, stage: int) -> int:
    ss = np.random.SeedSequence(entropy=(_NOISE_STREAM, cal_seed, run_seed, stage))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _make_provider(task: PruneTask, run_seed: int, noise: nets.NoiseSpec | None):
    """Per-stage gradient provider with batch and noise streams decoupled.

    Batches depend on the run seed only; noise draws on the noise spec's
    calibration seed, the run seed, and the stage.  Two pipelines built with
    the same run seed therefore see identical batches and identical noise
    draws.
    """
    train = task.data.train
    batch_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(_BATCH_STREAM, run_seed))
    )

    def provider(stage: int, wbar: np.ndarray) -> np.ndarray:
        idx = batch_rng.choice(len(train), size=task.fisher_samples, replace=True)
        net = task.mlp.with_weights(wbar)
        G = nets.per_sample_gradients(net, train.features[idx], train.labels[idx])
        if noise is not None and noise.fraction > 0:
            sub = replace(noise, cal_seed=_noise_subseed(noise.cal_seed, run_seed, stage))
            G = nets.inject_noise(G, sub)
        return G

    return provider


def _run_one_seed(task, schedule, cfg, run_seed, noise) -> PruneResult:
    provider = _make_provider(task, run_seed, noise)

    def eval_fn(w):
        net = task.mlp.with_weights(w)
        train_res = nets.evaluate(net, task.data.train)
        test_res = nets.evaluate(net, task.data.test)
        return train_res.loss, test_res.loss, test_res.accuracy

    return swap_prune(provider, task.mlp.flat_weights, schedule, cfg, eval_fn)


def resolve_workers(max_workers: int | None = None) -> int:
    """Worker count for seed fan-out, capped by the SWAP_THREADS variable."""
    if max_workers is None:
        env = os.environ.get(THREADS_ENV)
        if env is not None:
            try:
                max_workers = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
        else:
            max_workers = os.cpu_count() or 1
    if max_workers < 1:
        raise ValueError(f"worker count must be >= 1, got {max_workers}")
    return max_workers


def run_pruning_runs(
    task: PruneTask,
    schedule: SparsitySchedule,
    cfg: EwrConfig,
    seeds: Sequence[int],
    noise: nets.NoiseSpec | None = None,
    max_workers: int | None = None,
) -> list[PruneResult]:
    """One pruning run per seed, in the seeds' given order.

    Runs are independent and may execute on a thread pool; results are
    returned in seed order regardless of pool size, so outputs do not depend
    on the worker count.
    """
    if not seeds:
        raise ValueError("seeds must be nonempty")
    workers = resolve_workers(max_workers)
    if workers == 1 or len(seeds) == 1:
        return [_run_one_seed(task, schedule, cfg, s, noise) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_one_seed, task, schedule, cfg, s, noise) for s in seeds
        ]
        return [f.result() for f in futures]


@dataclass(frozen=True)
class CompareRow:
    sparsity: float
    seed: int
    lr_loss: float
    ewr_loss: float
    diff_percent: float
    lr_accuracy: float
    ewr_accuracy: float


@dataclass(frozen=True)
class AggregateRow:
    sparsity: float
    lr_loss: float
    lr_ci: float
    ewr_loss: float
    ewr_ci: float
    diff_percent: float
    lr_accuracy: float
    ewr_accuracy: float
    seeds: int


@dataclass(frozen=True)
class CompareReport:
    """Per-seed rows plus per-sparsity aggregates of an LR/EWR comparison.

    ``diff_percent`` is ``100 * (lr_loss - ewr_loss) / lr_loss`` (positive
    means the transported plan won); confidence half-widths use a Student-t
    quantile at the report's confidence level.
    """

    rows: tuple[CompareRow, ...]
    aggregates: tuple[AggregateRow, ...]
    confidence: float

    DIFF_FORMULA = "diff_percent = 100 * (lr_loss - ewr_loss) / lr_loss"


def diff_percent(lr_loss: float, ewr_loss: float) -> float:
    if lr_loss > 0:
        return 100.0 * (lr_loss - ewr_loss) / lr_loss
    return 0.0


def t_half_width(values: np.ndarray, confidence: float) -> float:
    """Student-t confidence half-width of the mean; 0 for fewer than 2 values."""
    values = np.asarray(values, dtype=float)
    s = values.size
    if s < 2:
        return 0.0
    q = stats.t.ppf(0.5 * (1.0 + confidence), df=s - 1)
    return float(q * values.std(ddof=1) / np.sqrt(s))


def compare_single_seed(
    task: PruneTask,
    schedule: SparsitySchedule,
    cfg_lr: EwrConfig,
    cfg_ewr: EwrConfig,
    seed: int,
    noise: nets.NoiseSpec | None = None,
) -> list[CompareRow]:
    """Both pipelines for one seed, on identical batches and noise draws."""
    lr_res = _run_one_seed(task, schedule, cfg_lr, seed, noise)
    ewr_res = _run_one_seed(task, schedule, cfg_ewr, seed, noise)
    rows = []
    for lr_st, ewr_st in zip(lr_res.stages, ewr_res.stages):
        rows.append(CompareRow(
            sparsity=lr_st.sparsity,
            seed=int(seed),
            lr_loss=lr_st.test_loss,
            ewr_loss=ewr_st.test_loss,
            diff_percent=diff_percent(lr_st.test_loss, ewr_st.test_loss),
            lr_accuracy=lr_st.accuracy,
            ewr_accuracy=ewr_st.accuracy,
        ))
    return rows


def aggregate_rows(
    rows: Sequence[CompareRow],
    fractions: Sequence[float],
    confidence: float,
) -> list[AggregateRow]:
    """Per-sparsity means and Student-t half-widths over the seeds present."""
    aggregates = []
    for frac in fractions:
        stage_rows = [r for r in rows if r.sparsity == frac]
        if not stage_rows:
            continue
        lr_losses = np.array([r.lr_loss for r in stage_rows])
        ewr_losses = np.array([r.ewr_loss for r in stage_rows])
        lr_mean = float(lr_losses.mean())
        ewr_mean = float(ewr_losses.mean())
        aggregates.append(AggregateRow(
            sparsity=frac,
            lr_loss=lr_mean,
            lr_ci=t_half_width(lr_losses, confidence),
            ewr_loss=ewr_mean,
            ewr_ci=t_half_width(ewr_losses, confidence),
            diff_percent=diff_percent(lr_mean, ewr_mean),
            lr_accuracy=float(np.mean([r.lr_accuracy for r in stage_rows])),
            ewr_accuracy=float(np.mean([r.ewr_accuracy for r in stage_rows])),
            seeds=len(stage_rows),
        ))
    return aggregates


def compare_lr_ewr(
    task: PruneTask,
    schedule: SparsitySchedule,
    cfg_lr: EwrConfig,
    cfg_ewr: EwrConfig,
    seeds: Sequence[int],
    noise: nets.NoiseSpec | None = None,
    confidence: float = 0.90,
    max_workers: int | None = None,
) -> CompareReport:
    """Run both pipelines per seed on identical batches and noise draws.

    ``cfg_lr`` must use the diagonal plan; ``cfg_ewr`` one of the transported
    solvers (or ``uniform`` for the infinite-regularization ablation).
    Seeds fan out over a thread pool whose size never changes the result;
    rows and aggregates follow the given seed order.
    """
    if cfg_lr.plan_solver != "diagonal":
        raise ValueError(f"cfg_lr must use the diagonal plan, got {cfg_lr.plan_solver!r}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence!r}")
    if not seeds:
        raise ValueError("seeds must be nonempty")
    workers = resolve_workers(max_workers)
    if workers == 1 or len(seeds) == 1:
        per_seed = [
            compare_single_seed(task, schedule, cfg_lr, cfg_ewr, s, noise)
            for s in seeds
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(compare_single_seed, task, schedule, cfg_lr, cfg_ewr, s, noise)
                for s in seeds
            ]
            per_seed = [f.result() for f in futures]
    rows = [row for seed_rows in per_seed for row in seed_rows]
    aggregates = aggregate_rows(rows, schedule.fractions, confidence)
    return CompareReport(tuple(rows), tuple(aggregates), confidence)
