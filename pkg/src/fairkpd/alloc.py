"""Deterministic allocation: max-utility packing and group-coverage variants.

A plan selects pairwise vertex-disjoint exchange units.  The classical
objective maximizes total (expected) utility; the group-coverage variant adds
a floor on how many highly sensitized patients the plan must match, with two
rules for choosing that floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .bip import BinaryProgram, solve_bip
from .lp import LPStatus
from .recourse import ExchangeUnit

UTILITY_SLACK = 1e-6


class ExchangePlan(NamedTuple):
    """Selected unit indices, their total utility, and the matched vertices."""

    unit_indices: tuple[int, ...]
    utility: float
    matched: frozenset[int]


@dataclass(frozen=True)
class GroupFairnessSpec:
    """Require at least min_matched of the highly sensitized set to be matched."""

    highly_sensitized: frozenset[int]
    min_matched: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "highly_sensitized", frozenset(self.highly_sensitized))
        if self.min_matched < 0:
            raise ValueError("min_matched must be nonnegative")


class GroupCoverageInfeasible(Exception):
    """No plan reaches the required coverage; carries the best attainable value."""

    def __init__(self, required: int, max_coverage: int) -> None:
        super().__init__(
            f"required coverage {required} exceeds the attainable maximum {max_coverage}"
        )
        self.required = required
        self.max_coverage = max_coverage


def _disjointness_rows(units: Sequence[ExchangeUnit]) -> tuple[np.ndarray, list[str], np.ndarray]:
    touched: dict[int, list[int]] = {}
    for j, unit in enumerate(units):
        for v in unit.vertices:
            touched.setdefault(v, []).append(j)
    rows = np.zeros((len(touched), len(units)))
    for i, v in enumerate(sorted(touched)):
        rows[i, touched[v]] = 1.0
    return rows, ["<="] * len(touched), np.ones(len(touched))


def _plan_from_selection(units: Sequence[ExchangeUnit], x: np.ndarray) -> ExchangePlan:
    chosen = tuple(j for j in range(len(units)) if x[j] > 0.5)
    utility = float(sum(units[j].utility for j in chosen))
    matched = frozenset(v for j in chosen for v in units[j].vertices)
    return ExchangePlan(chosen, utility, matched)


def _coverage_counts(units: Sequence[ExchangeUnit], group: frozenset[int]) -> np.ndarray:
    return np.array([sum(v in group for v in unit.vertices) for unit in units], dtype=float)


def solve_max_utility(units: Sequence[ExchangeUnit]) -> ExchangePlan:
    """Maximum-utility vertex-disjoint selection; empty input gives the empty plan."""
    if not units:
        return ExchangePlan((), 0.0, frozenset())
    a, rels, rhs = _disjointness_rows(units)
    util = np.array([u.utility for u in units])
    sol = solve_bip(BinaryProgram(util, "max", a, tuple(rels), rhs))
    return _plan_from_selection(units, sol.x)


def solve_group_fair(units: Sequence[ExchangeUnit], spec: GroupFairnessSpec) -> ExchangePlan:
    """Max utility subject to matching at least spec.min_matched sensitized patients."""
    if not units:
        if spec.min_matched > 0:
            raise GroupCoverageInfeasible(spec.min_matched, 0)
        return ExchangePlan((), 0.0, frozenset())
    a, rels, rhs = _disjointness_rows(units)
    cover = _coverage_counts(units, spec.highly_sensitized)
    a = np.vstack([a, cover])
    rels = rels + [">="]
    rhs = np.append(rhs, float(spec.min_matched))
    util = np.array([u.utility for u in units])
    sol = solve_bip(BinaryProgram(util, "max", a, tuple(rels), rhs))
    if sol.status == LPStatus.INFEASIBLE:
        raise GroupCoverageInfeasible(
            spec.min_matched, select_alpha_max_feasible(units, spec.highly_sensitized)
        )
    return _plan_from_selection(units, sol.x)


def select_alpha_max_feasible(units: Sequence[ExchangeUnit], group: frozenset[int]) -> int:
    """Largest coverage of the group attainable by any plan."""
    if not units or not group:
        return 0
    a, rels, rhs = _disjointness_rows(units)
    cover = _coverage_counts(units, frozenset(group))
    sol = solve_bip(BinaryProgram(cover, "max", a, tuple(rels), rhs))
    return int(round(sol.objective))


def select_alpha_utility_preserving(units: Sequence[ExchangeUnit], group: frozenset[int]) -> int:
    """Largest coverage among plans whose utility matches the unconstrained optimum.

    With integer unit utilities the two stages collapse into one composite
    objective: weighting utility by more than the whole coverage range makes
    any utility shortfall (necessarily >= 1) unrecoverable, so the optimizer
    settles utility first and coverage second.  That avoids a stage-2 floor
    row sitting exactly on the optimum, which is brutally degenerate for
    branch and bound.  Fractional utilities fall back to the explicit
    two-stage form with the floor imposed as >= optimum - 1e-6.
    """
    if not units or not group:
        return 0
    a, rels, rhs = _disjointness_rows(units)
    util = np.array([u.utility for u in units])
    cover = _coverage_counts(units, frozenset(group))
    rounded = np.round(util)
    if np.max(np.abs(util - rounded)) <= 1e-9:
        weight = float(len(group)) + 1.0
        sol = solve_bip(BinaryProgram(weight * rounded + cover, "max", a, tuple(rels), rhs))
        return int(round(float(cover @ sol.x)))
    best = solve_max_utility(units)
    a = np.vstack([a, util])
    rels = rels + [">="]
    rhs = np.append(rhs, best.utility - UTILITY_SLACK)
    sol = solve_bip(BinaryProgram(cover, "max", a, tuple(rels), rhs))
    return int(round(sol.objective))
