"""Selection-probability prediction by resampling a historical pool.

The next matching run will happen once the pool has grown to a known size,
but the future arrivals are unknown.  Each replication therefore pads the
current pairs with a without-replacement sample of historical pairs up to the
run size, re-solves the rate-balanced allocation on the padded graph, and
records the current pairs' selection probabilities.  Means and quantiles
across replications give point and interval predictions.
"""

from __future__ import annotations

import dataclasses
import logging
import multiprocessing
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import KPDGraph
from .population import PopulationSpec, sample_pool
from .randomized import (
    CalibrationFairnessSpec,
    FairSolveIterationLimit,
    solve_calibration_fair,
)
from .recourse import ExchangeUnit, RecourseStrategy, units_for_strategy

log = logging.getLogger(__name__)


class PreEnumeratedUnits:
    """Exchange units enumerated once on a union graph, filtered per subset.

    A unit's value only depends on its own vertices and the edges among them,
    which an induced subgraph preserves, so filtering by vertex membership is
    equivalent to enumerating the subgraph from scratch (tests assert this).
    """

    def __init__(self, graph: KPDGraph,
                 strategy: RecourseStrategy = RecourseStrategy.none(),
                 max_cycle_length: int = 3) -> None:
        self.units = units_for_strategy(graph, strategy, max_cycle_length)
        width = max((len(u.vertices) for u in self.units), default=1)
        pad = np.zeros((len(self.units), width), dtype=np.int64)
        for i, unit in enumerate(self.units):
            pad[i, : len(unit.vertices)] = unit.vertices
            pad[i, len(unit.vertices):] = unit.vertices[0]
        self._pad = pad
        self._id_limit = max(graph.ids, default=0) + 1

    def filter(self, subset_ids) -> list[ExchangeUnit]:
        """Units whose vertices all lie in ``subset_ids``, enumeration order."""
        if not self.units:
            return []
        member = np.zeros(self._id_limit, dtype=bool)
        ids = [v for v in subset_ids if 0 <= v < self._id_limit]
        if ids:
            member[ids] = True
        keep = member[self._pad].all(axis=1)
        return [self.units[i] for i in np.flatnonzero(keep)]


def pre_enumerate_and_filter(graph: KPDGraph, subset_ids,
                             strategy: RecourseStrategy = RecourseStrategy.none(),
                             max_cycle_length: int = 3) -> list[ExchangeUnit]:
    """One-shot convenience wrapper around PreEnumeratedUnits."""
    return PreEnumeratedUnits(graph, strategy, max_cycle_length).filter(subset_ids)


@dataclass(frozen=True)
class PredictionConfig:
    """Inputs for one prediction run.

    ``union_graph`` holds current and historical pairs together under one
    consistent edge draw, so every replication solves on an induced subgraph
    of the same compatibility structure.  ``pool_size`` is the pool size at
    which the next allocation will run.
    """

    union_graph: KPDGraph
    current_ids: tuple[int, ...]
    historical_ids: tuple[int, ...]
    pool_size: int
    replications: int
    quantile_levels: tuple[float, float] = (0.025, 0.975)
    fairness_preset: str = "strong"
    max_cycle_length: int = 3
    keep_replication_values: bool = False

    def __post_init__(self) -> None:
        current = tuple(int(v) for v in self.current_ids)
        historical = tuple(int(v) for v in self.historical_ids)
        known = set(self.union_graph.ids)
        stray = (set(current) | set(historical)) - known
        if stray:
            raise ValueError(f"ids not in the union graph: {sorted(stray)[:5]}")
        if set(current) & set(historical):
            raise ValueError("current and historical pools overlap")
        if len(set(current)) != len(current) or len(set(historical)) != len(historical):
            raise ValueError("duplicate vertex ids")
        n1, n0, n = len(current), len(historical), int(self.pool_size)
        if not n1 < n < n0 + n1:
            raise ValueError(f"need current < pool_size < current+historical, got {n1} < {n} < {n0 + n1}")
        if int(self.replications) < 1:
            raise ValueError("replications must be >= 1")
        lo, hi = (float(q) for q in self.quantile_levels)
        if not 0.0 < lo < hi < 1.0:
            raise ValueError(f"quantile levels must satisfy 0 < lo < hi < 1, got {self.quantile_levels}")
        object.__setattr__(self, "current_ids", current)
        object.__setattr__(self, "historical_ids", historical)
        object.__setattr__(self, "pool_size", n)
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "quantile_levels", (lo, hi))


@dataclass(frozen=True)
class PredictionReport:
    """Point and interval predictions per current vertex.

    Intervals are empirical quantiles widened, if necessary, to contain the
    mean: a vertex matched in a sliver of replications can have a mean above
    its upper order statistic, and a point prediction outside its own
    interval is useless to report.
    """

    vertex_ids: tuple[int, ...]
    means: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    quantile_levels: tuple[float, float]
    replications: int
    failed_replications: int
    replication_values: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (len(self.vertex_ids) == self.means.size == self.lower.size == self.upper.size):
            raise ValueError("per-vertex arrays disagree in length")
        if self.means.size and (
            (self.lower > self.means + 1e-12).any() or (self.means > self.upper + 1e-12).any()
        ):
            raise ValueError("interval does not contain the mean")

    def format_table(self) -> str:
        lines = ["vertex\tmean\tlower\tupper"]
        for i, v in enumerate(self.vertex_ids):
            lines.append(f"{v}\t{self.means[i]:.6f}\t{self.lower[i]:.6f}\t{self.upper[i]:.6f}")
        return "\n".join(lines) + "\n"


def predict(config: PredictionConfig, seed) -> PredictionReport:
    """Resample padded pools and aggregate the per-replication rates.

    Replications whose solve hits the iteration limit are dropped from the
    aggregate and counted in ``failed_replications``.
    """
    rng = np.random.default_rng(seed)
    pre = PreEnumeratedUnits(config.union_graph,
                             max_cycle_length=config.max_cycle_length)
    draw = config.pool_size - len(config.current_ids)
    historical = np.array(config.historical_ids, dtype=np.int64)
    runs: list[np.ndarray] = []
    failed = 0
    for b in range(config.replications):
        sampled = rng.choice(historical, size=draw, replace=False)
        subset = list(config.current_ids) + [int(v) for v in sampled]
        sub = config.union_graph.induced_subgraph(subset)
        units = pre.filter(subset)
        spec = CalibrationFairnessSpec.from_graph(sub, preset=config.fairness_preset)
        try:
            policy = solve_calibration_fair(sub, units, spec)
        except FairSolveIterationLimit as exc:
            failed += 1
            log.warning("replication %d failed: %s", b, exc)
            continue
        runs.append(np.array([policy.marginal_of(v) for v in config.current_ids]))
    if not runs:
        raise RuntimeError(f"all {config.replications} replications failed")
    values = np.vstack(runs)
    means = values.mean(axis=0)
    lo, hi = config.quantile_levels
    lower = np.minimum(np.quantile(values, lo, axis=0), means)
    upper = np.maximum(np.quantile(values, hi, axis=0), means)
    return PredictionReport(
        vertex_ids=config.current_ids,
        means=means,
        lower=lower,
        upper=upper,
        quantile_levels=config.quantile_levels,
        replications=config.replications,
        failed_replications=failed,
        replication_values=values if config.keep_replication_values else None,
    )


def evaluate_prediction(report: PredictionReport,
                        truth: Sequence[float]) -> tuple[float, float, float]:
    """(mean squared error, interval coverage, mean interval width) vs truth."""
    t = np.asarray(truth, dtype=float)
    if t.shape != report.means.shape:
        raise ValueError(f"truth has shape {t.shape}, report has {report.means.shape}")
    mse = float(np.mean((report.means - t) ** 2))
    inside = (report.lower - 1e-9 <= t) & (t <= report.upper + 1e-9)
    coverage = float(np.mean(inside))
    width = float(np.mean(report.upper - report.lower))
    return mse, coverage, width


@dataclass(frozen=True)
class AccuracyRow:
    """Study aggregate for one current-pool size."""

    current_size: int
    mse: float
    coverage: float
    width: float
    failed_replications: int
    data_replications: int


def _study_task(args) -> tuple[int, float, float, float, int]:
    (population, historical_size, pool_size, current_size, replications,
     preset, max_cycle_length, seed_key) = args
    union_size = historical_size + pool_size
    pool_spec = dataclasses.replace(population, pool_size=union_size)
    graph = sample_pool(pool_spec, seed=list(seed_key) + [0])
    ids = graph.sorted_ids
    historical = ids[:historical_size]
    current = ids[historical_size:historical_size + current_size]
    future = ids[historical_size + current_size:]
    config = PredictionConfig(
        union_graph=graph,
        current_ids=current,
        historical_ids=historical,
        pool_size=pool_size,
        replications=replications,
        fairness_preset=preset,
        max_cycle_length=max_cycle_length,
    )
    report = predict(config, seed=list(seed_key) + [1])
    realized = graph.induced_subgraph(current + future)
    units = units_for_strategy(realized, RecourseStrategy.none(), max_cycle_length)
    spec = CalibrationFairnessSpec.from_graph(realized, preset=preset)
    policy = solve_calibration_fair(realized, units, spec)
    truth = [policy.marginal_of(v) for v in current]
    mse, coverage, width = evaluate_prediction(report, truth)
    return current_size, mse, coverage, width, report.failed_replications


def prediction_accuracy_study(
    population: PopulationSpec,
    historical_size: int,
    pool_size: int,
    current_sizes: Sequence[int],
    replications: int,
    data_replications: int,
    seed: int,
    preset: str = "strong",
    max_cycle_length: int = 3,
    workers: int | None = None,
) -> list[AccuracyRow]:
    """Accuracy of the predictor against the realized allocation.

    For every current-pool size and data replication, draws an independent
    union pool (historical + current + future) from ``population``, predicts
    via ``predict``, and scores against the rates obtained by solving the
    same allocation on the realized current+future pool.  Rows are averaged
    over data replications.
    """
    if len(set(int(c) for c in current_sizes)) != len(tuple(current_sizes)):
        raise ValueError("current_sizes must be distinct")
    tasks = []
    for idx, current_size in enumerate(current_sizes):
        for d in range(data_replications):
            tasks.append((population, historical_size, pool_size, int(current_size),
                          replications, preset, max_cycle_length, (seed, idx, d)))
    if workers is not None and workers > 1 and len(tasks) > 1:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            outcomes = pool.map(_study_task, tasks)
    else:
        outcomes = [_study_task(t) for t in tasks]
    rows = []
    for current_size in (int(c) for c in current_sizes):
        hits = [o for o in outcomes if o[0] == current_size]
        rows.append(AccuracyRow(
            current_size=current_size,
            mse=float(np.mean([o[1] for o in hits])),
            coverage=float(np.mean([o[2] for o in hits])),
            width=float(np.mean([o[3] for o in hits])),
            failed_replications=int(sum(o[4] for o in hits)),
            data_replications=len(hits),
        ))
    return rows


def format_accuracy_table(rows: Sequence[AccuracyRow]) -> str:
    lines = ["current_size\tmse\tcoverage\twidth\tfailed\tdata_replications"]
    for r in rows:
        lines.append(f"{r.current_size}\t{r.mse:.6f}\t{r.coverage:.6f}"
                     f"\t{r.width:.6f}\t{r.failed_replications}\t{r.data_replications}")
    return "\n".join(lines) + "\n"
