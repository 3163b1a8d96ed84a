"""Replicated pool studies comparing allocation criteria.

Each replication samples a pool, prices the exchange units under the
configured backup strategy, solves every requested criterion, and records
per-subgroup selection rates plus the relative utility cost against the
unconstrained optimum.  Deterministic plans enter the rate bookkeeping as
0/1 indicators so their tables are directly comparable with randomized
policies' probabilities.
"""

from __future__ import annotations

import logging
import multiprocessing
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import KPDGraph
from .population import PopulationSpec, UNOSRecord, build_unos_graph, sample_pool
from .randomized import (
    CalibrationFairnessSpec,
    solve_calibration_fair,
    solve_individual_fair,
)
from .recourse import RecourseStrategy, units_for_strategy
from .alloc import (
    ExchangePlan,
    GroupFairnessSpec,
    select_alpha_max_feasible,
    select_alpha_utility_preserving,
    solve_group_fair,
    solve_max_utility,
)

log = logging.getLogger(__name__)

# Sensitization class treated as "highly sensitized" by group fairness.
HIGH_SENSITIZATION_CLASS = 3


class ZeroBaseline(ValueError):
    """Relative loss is undefined when the unconstrained optimum is zero."""


def price_of_fairness(baseline_utility: float, constrained_utility: float) -> float:
    """Relative utility given up by the constrained allocation."""
    if baseline_utility <= 0.0:
        raise ZeroBaseline(f"baseline utility {baseline_utility!r} is not positive")
    return (baseline_utility - constrained_utility) / baseline_utility


@dataclass(frozen=True)
class CriterionSpec:
    """One allocation criterion with its parameter choice."""

    kind: str
    parameter: str = ""

    _KINDS = {
        "none": ("",),
        "group": ("max_feasible", "utility_preserving"),
        "individual": ("0.8", "1.0"),
        "calibration": ("strong", "weak"),
    }

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.parameter not in self._KINDS[self.kind]:
            raise ValueError(f"criterion {self.kind!r} does not take parameter {self.parameter!r}")

    @property
    def label(self) -> str:
        return self.kind if not self.parameter else f"{self.kind}-{self.parameter}"

    @classmethod
    def none(cls) -> "CriterionSpec":
        return cls("none")

    @classmethod
    def group(cls, rule: str) -> "CriterionSpec":
        return cls("group", rule)

    @classmethod
    def individual(cls, utility_floor_fraction: float) -> "CriterionSpec":
        return cls("individual", f"{float(utility_floor_fraction):g}")

    @classmethod
    def calibration(cls, preset: str) -> "CriterionSpec":
        return cls("calibration", preset)


def all_criteria() -> tuple[CriterionSpec, ...]:
    """The full comparison grid: baseline plus both parameterizations each."""
    return (
        CriterionSpec.none(),
        CriterionSpec.group("max_feasible"),
        CriterionSpec.group("utility_preserving"),
        CriterionSpec.individual(0.8),
        CriterionSpec.individual(1.0),
        CriterionSpec.calibration("strong"),
        CriterionSpec.calibration("weak"),
    )


@dataclass(frozen=True)
class ExperimentSpec:
    """Pool source, criteria grid, and replication plan for one study."""

    replications: int
    criteria: tuple[CriterionSpec, ...]
    seed: int
    population: PopulationSpec | None = None
    unos_records: tuple[UNOSRecord, ...] | None = None
    unos_pool_size: int | None = None
    recourse: RecourseStrategy = field(default_factory=RecourseStrategy.none)
    max_cycle_length: int = 3

    def __post_init__(self) -> None:
        if int(self.replications) < 1:
            raise ValueError("replications must be >= 1")
        if not self.criteria:
            raise ValueError("at least one criterion is required")
        has_pop = self.population is not None
        has_unos = self.unos_records is not None
        if has_pop == has_unos:
            raise ValueError("exactly one of population / unos_records must be given")
        if has_unos:
            if not self.unos_records:
                raise ValueError("unos_records is empty")
            if self.unos_pool_size is None or int(self.unos_pool_size) < 1:
                raise ValueError("unos_pool_size must be >= 1 with unos_records")
        object.__setattr__(self, "criteria", tuple(self.criteria))
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "seed", int(self.seed))

    def sample_graph(self, replication: int) -> KPDGraph:
        if self.population is not None:
            return sample_pool(self.population, seed=[self.seed, replication])
        return build_unos_graph(self.unos_records, int(self.unos_pool_size),
                                seed=[self.seed, replication])


def subgroup_labels() -> tuple[str, ...]:
    """Reporting order: protected group 0 then 1, class 1..3 inside each."""
    return tuple(f"group{a}-class{m}" for a in (0, 1) for m in (1, 2, 3))


def _vertex_rates(graph: KPDGraph, plan_or_policy, units) -> dict[int, float]:
    """Selection rate per vertex id; deterministic plans give 0/1 indicators."""
    if isinstance(plan_or_policy, ExchangePlan):
        matched = plan_or_policy.matched
        return {v: 1.0 if v in matched else 0.0 for v in graph.ids}
    policy = plan_or_policy
    return {v: policy.marginal_of(v) for v in graph.ids}


def _solve_criterion(criterion: CriterionSpec, graph: KPDGraph, units,
                     baseline: ExchangePlan):
    """Returns (object with rates, achieved utility)."""
    if criterion.kind == "none":
        return baseline, baseline.utility
    if criterion.kind == "group":
        high = frozenset(v.id for v in graph.vertices
                         if v.sensitization_class == HIGH_SENSITIZATION_CLASS)
        if criterion.parameter == "max_feasible":
            alpha = select_alpha_max_feasible(units, high)
        else:
            alpha = select_alpha_utility_preserving(units, high)
        plan = solve_group_fair(units, GroupFairnessSpec(high, alpha))
        return plan, plan.utility
    if criterion.kind == "individual":
        policy = solve_individual_fair(graph, units, float(criterion.parameter))
        return policy, policy.expected_utility
    spec = CalibrationFairnessSpec.from_graph(graph, preset=criterion.parameter)
    policy = solve_calibration_fair(graph, units, spec)
    return policy, policy.expected_utility


def _replication_task(args) -> dict:
    spec, replication = args
    try:
        graph = spec.sample_graph(replication)
        units = units_for_strategy(graph, spec.recourse, spec.max_cycle_length)
        baseline = solve_max_utility(units)
        members = {
            label: [v.id for v in graph.vertices
                    if v.protected_feature == a and v.sensitization_class == m]
            for label, (a, m) in zip(subgroup_labels(),
                                     [(a, m) for a in (0, 1) for m in (1, 2, 3)])
        }
        out = {"replication": replication, "rates": {}, "gaps": {}, "loss": {}}
        for criterion in spec.criteria:
            solved, utility = _solve_criterion(criterion, graph, units, baseline)
            per_vertex = _vertex_rates(graph, solved, units)
            rates = [
                float(np.mean([per_vertex[v] for v in members[label]]))
                if members[label] else np.nan
                for label in subgroup_labels()
            ]
            gaps = []
            for m in (1, 2, 3):
                g0, g1 = members[f"group0-class{m}"], members[f"group1-class{m}"]
                if g0 and g1:
                    r0 = float(np.mean([per_vertex[v] for v in g0]))
                    r1 = float(np.mean([per_vertex[v] for v in g1]))
                    gaps.append(abs(r1 - r0))
                else:
                    gaps.append(np.nan)
            out["rates"][criterion.label] = rates
            out["gaps"][criterion.label] = gaps
            out["loss"][criterion.label] = price_of_fairness(baseline.utility, utility)
        return out
    except Exception as exc:
        raise RuntimeError(f"replication {replication} failed: {exc}") from exc


@dataclass(frozen=True)
class ExperimentResult:
    """Aggregates over replications; NaN marks subgroups empty in every pool."""

    criteria: tuple[str, ...]
    subgroups: tuple[str, ...]
    mean_rates: np.ndarray        # (criterion, subgroup)
    gap_mean: np.ndarray          # (criterion, class)
    gap_sd: np.ndarray            # (criterion, class)
    mean_loss: np.ndarray         # (criterion,)
    sd_loss: np.ndarray
    replications: int

    def loss_of(self, label: str) -> float:
        return float(self.mean_loss[self.criteria.index(label)])

    def format_tables(self) -> str:
        lines = ["criterion\tsubgroup\tmean_rate"]
        for i, crit in enumerate(self.criteria):
            for j, sub in enumerate(self.subgroups):
                lines.append(f"{crit}\t{sub}\t{self.mean_rates[i, j]:.6f}")
        lines.append("")
        lines.append("criterion\tclass\tgap_mean\tgap_sd")
        for i, crit in enumerate(self.criteria):
            for m in (1, 2, 3):
                lines.append(f"{crit}\tclass{m}\t{self.gap_mean[i, m - 1]:.6f}"
                             f"\t{self.gap_sd[i, m - 1]:.6f}")
        lines.append("")
        lines.append("criterion\tmean_loss\tsd_loss")
        for i, crit in enumerate(self.criteria):
            lines.append(f"{crit}\t{self.mean_loss[i]:.6f}\t{self.sd_loss[i]:.6f}")
        return "\n".join(lines) + "\n"


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentResult:
    """Run all replications (optionally in parallel) and aggregate."""
    tasks = [(spec, r) for r in range(spec.replications)]
    if workers is not None and workers > 1 and len(tasks) > 1:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            outcomes = pool.map(_replication_task, tasks)
    else:
        outcomes = [_replication_task(t) for t in tasks]
    labels = tuple(c.label for c in spec.criteria)
    subs = subgroup_labels()
    rates = np.array([[o["rates"][c] for o in outcomes] for c in labels])   # (crit, rep, sub)
    gaps = np.array([[o["gaps"][c] for o in outcomes] for c in labels])     # (crit, rep, 3)
    loss = np.array([[o["loss"][c] for o in outcomes] for c in labels])     # (crit, rep)
    with np.errstate(invalid="ignore"):
        result = ExperimentResult(
            criteria=labels,
            subgroups=subs,
            mean_rates=np.nanmean(rates, axis=1),
            gap_mean=np.nanmean(gaps, axis=1),
            gap_sd=np.nanstd(gaps, axis=1),
            mean_loss=loss.mean(axis=1),
            sd_loss=loss.std(axis=1),
            replications=spec.replications,
        )
    log.info("experiment done: %d replications, %d criteria",
             spec.replications, len(labels))
    return result
