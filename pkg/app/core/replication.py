"""
Monte-Carlo replication of the three simulation tables.

Every replication gets its own integer seed spawned from the master seed, runs
independently (optionally in a process pool) and is aggregated in index order,
so reports do not depend on the worker count.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from core.base import SCHEMA, TABLE_DESIGNS
from core.config import RunConfig, Scheme
from core.estimation import Mode, estimate_transforms, w_estimate
from core.forecasting import Baseline, Oracle, baseline_forecasts, rolling_backtest
from core.matcore import MatrixSeries, center
from core.segmentation import segment
from core.simgen import (
    SegmentationOutcome,
    align_to_truth,
    classify_segmentation,
    gen_example1,
    gen_example2,
    gen_example3,
    map_groups,
    metric_D,
    metric_D1,
)
from core.transform import proxy_targets
from utils.errors import MatsegError, ValidationError

log = logging.getLogger(__name__)

ProgressCallback = Callable[[str, dict], None]

DESIGN_TABLES = {design: table for table, design in TABLE_DESIGNS.items()}
UNSEGMENTED = "unsegmented"
FAILED = "failed"
NEAR_CORRECT = "near_correct"


@dataclass(frozen=True, slots=True)
class MetricSummary:
    mean: float
    sd: float
    n: int

    @classmethod
    def of(cls, values: list[float]) -> "MetricSummary":
        arr = np.asarray(values, dtype=float)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return cls(mean=float(arr.mean()), sd=sd, n=int(arr.size))


@dataclass(frozen=True, slots=True)
class RepResult:
    index: int
    seed: int
    metrics: dict[str, float] = field(default_factory=dict)
    outcome: str = UNSEGMENTED
    error: str | None = None


@dataclass(frozen=True, slots=True)
class ReplicationReport:
    design: str
    table: int
    dims: dict[str, int]
    n_reps: int
    master_seed: int
    seeds: tuple[int, ...]
    metrics: dict[str, MetricSummary]
    counts: dict[str, int]
    failures: tuple[dict, ...] = ()

    def frequencies(self) -> dict[str, float]:
        return {k: v / self.n_reps for k, v in self.counts.items()}

    def summary_rows(self) -> list[dict]:
        """Flat rows for CSV and spreadsheet summaries."""
        base = {"table": self.table, "design": self.design, **self.dims}
        rows = [
            {**base, "metric": name, "n": s.n, "mean": s.mean, "sd": s.sd}
            for name, s in self.metrics.items()
        ]
        rows.extend(
            {**base, "metric": f"freq_{name}", "n": self.n_reps, "mean": freq, "sd": None}
            for name, freq in self.frequencies().items()
        )
        return rows

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "design": self.design,
            "table": self.table,
            "dims": dict(self.dims),
            "n_reps": self.n_reps,
            "master_seed": self.master_seed,
            "seeds": list(self.seeds),
            "metrics": {
                name: {"mean": s.mean, "sd": s.sd, "n": s.n} for name, s in self.metrics.items()
            },
            "counts": dict(self.counts),
            "frequencies": self.frequencies(),
            "failures": list(self.failures),
        }


def spawn_seeds(master_seed: int, n_reps: int) -> list[int]:
    children = np.random.SeedSequence(master_seed).spawn(n_reps)
    return [int(child.generate_state(1)[0]) for child in children]


# ---------------------------------------------------------------------------
# Per-table runners (module level so a process pool can pickle them)
# ---------------------------------------------------------------------------


def _run_table1(seed: int, config: RunConfig) -> RepResult:
    """D of the unordered eigenvectors against the normalized true transforms."""
    settings = config.pipeline()
    X, truth = gen_example1(config.T, config.p, config.q, seed)
    Xc, _ = center(X)
    col_w, row_w = estimate_transforms(
        Xc, settings.tau0, settings.eig_transform, settings.w_method
    )
    a_proxy, b_proxy = proxy_targets(truth.A, truth.B, truth.U, X)
    metrics = {
        "D_A": metric_D(col_w.eig.eigenvectors, a_proxy),
        "D_B": metric_D(row_w.eig.eigenvectors, b_proxy),
    }
    return RepResult(index=-1, seed=seed, metrics=metrics, outcome=UNSEGMENTED)


def _matched_blocks(vectors, target, found_groups, true_groups, mapping):
    """Estimated and true column blocks paired by true block."""
    by_truth = {}
    for g in found_groups:
        by_truth[tuple(sorted(int(mapping[k]) for k in g))] = list(g)
    hats = [vectors[:, by_truth[tuple(sorted(t))]] for t in true_groups]
    stars = [target[:, list(t)] for t in true_groups]
    return hats, stars


def _run_table2(seed: int, config: RunConfig) -> RepResult:
    """Column segmentation outcome, with D1 on correctly segmented draws."""
    settings = config.pipeline()
    X, truth = gen_example2(config.T, config.p, config.q, seed)
    Xc, _ = center(X)
    col_w = w_estimate(Xc, Mode.COLUMNS, settings.tau0, settings.eig_transform, settings.w_method)
    seg = segment(
        Xc,
        col_w,
        tau1=settings.tau1,
        c_r=settings.c_r,
        prewhiten_series=settings.prewhiten,
        selector=settings.selector,
        rho_floor=settings.rho_floor,
        max_order=settings.max_ar_order,
    )
    a_proxy, _ = proxy_targets(truth.A, truth.B, truth.U, X)
    vectors = col_w.eig.eigenvectors
    mapping = align_to_truth(vectors, a_proxy, truth.col_groups)
    found = map_groups(seg.groups, mapping)
    outcome = classify_segmentation(found, truth.col_groups)
    metrics = {"n_groups": float(seg.n_groups)}
    if outcome is SegmentationOutcome.CORRECT:
        hats, stars = _matched_blocks(vectors, a_proxy, seg.groups, truth.col_groups, mapping)
        metrics["D1"] = metric_D1(hats, stars)
    return RepResult(index=-1, seed=seed, metrics=metrics, outcome=outcome.value)


def _combined_outcome(col: SegmentationOutcome, row: SegmentationOutcome) -> str:
    """correct on both sides; near_correct when one or both sides merged two blocks."""
    both = {col, row}
    if both == {SegmentationOutcome.CORRECT}:
        return SegmentationOutcome.CORRECT.value
    if both <= {SegmentationOutcome.CORRECT, SegmentationOutcome.MERGING}:
        return NEAR_CORRECT
    return SegmentationOutcome.OTHER.value


def _run_table3(seed: int, config: RunConfig) -> RepResult:
    """Rolling forecast MSE of the pipeline, both oracles and the direct baselines."""
    settings = config.pipeline()
    holdout, horizon = config.holdout, config.horizon
    X, truth = gen_example3(config.T + holdout, config.p, config.q, seed)
    truth_mean = truth.cond_mean(holdout, horizon)
    scheme = Scheme(config.scheme)

    seg_report = rolling_backtest(
        X, holdout, horizon, scheme, settings, truth_mean=truth_mean
    )
    metrics = {"mse_segmentation": seg_report.mse}
    for oracle in Oracle:
        report = rolling_backtest(
            X, holdout, horizon, scheme, settings,
            truth_mean=truth_mean, oracle=oracle, sim_truth=truth,
        )
        metrics[f"mse_{oracle.value}"] = report.mse
    for name in config.baselines or [Baseline.VAR1.value, Baseline.MAR1.value]:
        report = baseline_forecasts(X, holdout, horizon, Baseline(name), truth_mean=truth_mean)
        metrics[f"mse_{name}"] = report.mse

    fit = seg_report.initial_fit
    train_T = config.T
    train = MatrixSeries(X.values[:train_T])
    latent = MatrixSeries(truth.U.values[:train_T])
    a_proxy, b_proxy = proxy_targets(truth.A, truth.B, latent, train)
    col_map = align_to_truth(fit.col_w.eig.eigenvectors, a_proxy, truth.col_groups)
    row_map = align_to_truth(fit.row_w.eig.eigenvectors, b_proxy, truth.row_groups)
    col_outcome = classify_segmentation(map_groups(fit.col_seg.groups, col_map), truth.col_groups)
    row_outcome = classify_segmentation(map_groups(fit.row_seg.groups, row_map), truth.row_groups)
    outcome = _combined_outcome(col_outcome, row_outcome)
    metrics[f"mse_segmentation_{outcome}"] = seg_report.mse
    return RepResult(index=-1, seed=seed, metrics=metrics, outcome=outcome)


_RUNNERS = {1: _run_table1, 2: _run_table2, 3: _run_table3}


def _run_one(task: tuple[int, int, int, RunConfig]) -> RepResult:
    index, seed, table, config = task
    try:
        result = _RUNNERS[table](seed, config)
    except (MatsegError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        return RepResult(index=index, seed=seed, outcome=FAILED, error=f"{type(exc).__name__}: {exc}")
    return RepResult(
        index=index, seed=seed, metrics=result.metrics, outcome=result.outcome
    )


def aggregate(
    design: str,
    table: int,
    dims: dict[str, int],
    master_seed: int,
    results: list[RepResult],
) -> ReplicationReport:
    results = sorted(results, key=lambda r: r.index)
    collected: dict[str, list[float]] = {}
    for result in results:
        for name, value in result.metrics.items():
            collected.setdefault(name, []).append(value)
    counts = Counter(r.outcome for r in results)
    failures = tuple(
        {"index": r.index, "seed": r.seed, "error": r.error} for r in results if r.error
    )
    return ReplicationReport(
        design=design,
        table=table,
        dims=dims,
        n_reps=len(results),
        master_seed=master_seed,
        seeds=tuple(r.seed for r in results),
        metrics={name: MetricSummary.of(collected[name]) for name in sorted(collected)},
        counts={k: counts[k] for k in sorted(counts)},
        failures=failures,
    )


def run_replications(
    design: str,
    config: RunConfig,
    n_reps: int | None = None,
    master_seed: int | None = None,
    threads: int | None = None,
    progress_cb: ProgressCallback | None = None,
) -> ReplicationReport:
    """
    Run `n_reps` independent replications of the table that uses `design`.
    """
    if design not in DESIGN_TABLES:
        raise ValidationError(f"unknown design {design!r}")
    if config.p is None or config.q is None or config.T is None:
        raise ValidationError("replications need p, q and T")
    table = DESIGN_TABLES[design]
    n_reps = config.reps if n_reps is None else n_reps
    master_seed = config.seed if master_seed is None else master_seed
    threads = config.threads if threads is None else threads
    if n_reps < 1:
        raise ValidationError(f"n_reps must be >= 1, got {n_reps}")

    def _emit(event: str, **payload) -> None:
        if progress_cb is not None:
            progress_cb(event, payload)

    seeds = spawn_seeds(master_seed, n_reps)
    tasks = [(i, seed, table, config) for i, seed in enumerate(seeds)]
    dims = {"p": config.p, "q": config.q, "T": config.T}
    log.info(
        "Table %d (%s): %d replication(s) at p=%d, q=%d, T=%d, master seed %d",
        table, design, n_reps, config.p, config.q, config.T, master_seed,
    )
    _emit("start", total=n_reps, table=table)

    results: list[RepResult] = []
    if threads > 1 and n_reps > 1:
        with ProcessPoolExecutor(max_workers=min(threads, n_reps)) as executor:
            for result in executor.map(_run_one, tasks):
                results.append(result)
                _emit("rep_done", done=len(results), total=n_reps, outcome=result.outcome)
    else:
        for task in tasks:
            result = _run_one(task)
            results.append(result)
            _emit("rep_done", done=len(results), total=n_reps, outcome=result.outcome)

    for result in results:
        if result.error:
            log.warning("replication %d (seed %d) failed: %s", result.index, result.seed, result.error)
        else:
            log.debug("replication %d: %s %s", result.index, result.outcome, result.metrics)

    report = aggregate(design, table, dims, master_seed, results)
    _emit("finished", total=n_reps, failures=len(report.failures))
    return report
