"""Expected utility of exchange units under failure-aware recourse strategies.

A selected unit (cycle or small vertex subset) may lose vertices or edges
between selection and execution.  Three strategies value a unit:

* no recourse: the unit pays off only if every vertex and cycle edge survives,
* internal recourse: after failures, the best plan on the unit's surviving
  induced subgraph is executed instead,
* subset recourse: like internal recourse but the unit is a relevant subset
  and fallback plans use cycles of bounded length.

All expectations are exact: failure events are independent Bernoulli draws per
vertex and per edge, and the scenario space is enumerated over the items that
some candidate sub-plan actually uses (dropping unused items cannot change the
expectation).  Units whose reduced scenario space still exceeds
``SCENARIO_CAP`` are rejected rather than sampled.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .graph import (
    Cycle,
    Edge,
    KPDGraph,
    RelevantSubset,
    enumerate_cycles,
    enumerate_relevant_subsets,
)

SCENARIO_CAP = 1 << 20


class UnitTooLarge(ValueError):
    """Raised when exact scenario enumeration would exceed SCENARIO_CAP."""


@dataclass(frozen=True)
class RecourseStrategy:
    """Which fallback is allowed after failures: none, internal, or subset(k, q)."""

    kind: str
    k: int | None = None
    q: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("none", "internal", "subset"):
            raise ValueError(f"unknown recourse kind {self.kind!r}")
        if self.kind == "subset":
            if self.k is None or self.q is None:
                raise ValueError("subset recourse needs both k and q")
            if self.k < 2 or self.q < 0:
                raise ValueError("subset recourse requires k >= 2 and q >= 0")
        elif self.k is not None or self.q is not None:
            raise ValueError(f"{self.kind} recourse takes no (k, q)")

    @classmethod
    def none(cls) -> "RecourseStrategy":
        return cls("none")

    @classmethod
    def internal(cls) -> "RecourseStrategy":
        return cls("internal")

    @classmethod
    def subset(cls, k: int, q: int) -> "RecourseStrategy":
        return cls("subset", k, q)


class FailureScenario(NamedTuple):
    """One joint survival outcome inside a unit."""

    surviving_vertices: frozenset[int]
    surviving_edges: frozenset[Edge]


class ExchangeUnit(NamedTuple):
    """A selectable unit: the vertices it covers and the utility it is credited."""

    vertices: tuple[int, ...]
    utility: float
    base: Cycle | RelevantSubset


def expected_utility_no_recourse(unit: Cycle, graph: KPDGraph) -> float:
    """u(c) times the probability that every vertex and edge of c survives."""
    value = unit.utility
    for v in unit.vertices:
        value *= 1.0 - graph.vertex_by_id[v].vertex_failure_prob
    for e in unit.edges:
        value *= 1.0 - graph.edge_failure_prob.get(e, 0.0)
    return value


def expected_utility_internal(unit: Cycle, graph: KPDGraph) -> float:
    """Expected utility when the best surviving sub-plan of the cycle is executed.

    Fallback plans may use any edge of the induced subgraph on the cycle's
    vertex set, not just the cycle's own edges, so a reversed pair inside a
    3-cycle counts as recourse.
    """
    return _expected_best_plan_utility(graph, unit.vertices, len(unit.vertices))


def expected_utility_subset(unit: RelevantSubset, graph: KPDGraph, k: int) -> float:
    """Expected utility of the best surviving plan of cycles of length <= k."""
    return _expected_best_plan_utility(graph, unit.sorted_vertices, k)


def enumerate_failure_scenarios(
    graph: KPDGraph, vertex_ids: Sequence[int]
) -> Iterator[tuple[FailureScenario, float]]:
    """Yield every joint survival outcome of the induced subgraph with its probability.

    Reference path: enumerates all 2^(vertices+edges) outcomes with no
    used-item reduction, so it is only suitable for small units.
    """
    ids = sorted(vertex_ids)
    sub = graph.induced_subgraph(ids)
    edges = sorted(sub.edges)
    items = len(ids) + len(edges)
    if 1 << items > SCENARIO_CAP:
        raise UnitTooLarge(f"{items} failure items exceed the enumeration cap")
    v_fail = [graph.vertex_by_id[v].vertex_failure_prob for v in ids]
    e_fail = [graph.edge_failure_prob.get(e, 0.0) for e in edges]
    probs = v_fail + e_fail
    for mask in range(1 << items):
        p = 1.0
        for j, q in enumerate(probs):
            p *= q if mask >> j & 1 else 1.0 - q
        if p == 0.0:
            continue
        alive_v = frozenset(v for j, v in enumerate(ids) if not mask >> j & 1)
        alive_e = frozenset(
            e for j, e in enumerate(edges) if not mask >> (len(ids) + j) & 1
        )
        yield FailureScenario(alive_v, alive_e), p


def units_for_strategy(
    graph: KPDGraph, strategy: RecourseStrategy, max_cycle_len: int = 3
) -> tuple[ExchangeUnit, ...]:
    """Enumerate the selectable units of a pool and value each one.

    With no recourse the units are cycles valued by the closed-form survival
    product (which collapses to u(c) when all failure probabilities are zero);
    internal recourse keeps cycle units but values them by scenario
    expectation; subset recourse switches to relevant subsets.
    """
    if strategy.kind == "subset":
        subsets = enumerate_relevant_subsets(graph, strategy.k, strategy.q)
        return tuple(
            ExchangeUnit(s.sorted_vertices, expected_utility_subset(s, graph, strategy.k), s)
            for s in subsets
        )
    cycles = enumerate_cycles(graph, max_cycle_len)
    if strategy.kind == "none":
        return tuple(
            ExchangeUnit(tuple(sorted(c.vertices)), expected_utility_no_recourse(c, graph), c)
            for c in cycles
        )
    return tuple(
        ExchangeUnit(tuple(sorted(c.vertices)), expected_utility_internal(c, graph), c)
        for c in cycles
    )


def _plans_within(
    graph: KPDGraph, vertex_ids: Sequence[int], max_cycle_len: int
) -> list[tuple[float, tuple[int, ...], tuple[Edge, ...]]]:
    """All nonempty vertex-disjoint cycle plans in an induced subgraph.

    Returns (utility, vertices, edges) triples; vertices/edges are the items
    the plan needs to survive.
    """
    sub = graph.induced_subgraph(vertex_ids)
    cycles = enumerate_cycles(sub, max_cycle_len)
    cycle_sets = [frozenset(c.vertices) for c in cycles]
    plans: list[tuple[float, tuple[int, ...], tuple[Edge, ...]]] = []

    def extend(start: int, used: frozenset[int], util: float,
               verts: tuple[int, ...], edges: tuple[Edge, ...]) -> None:
        for j in range(start, len(cycles)):
            if used & cycle_sets[j]:
                continue
            c = cycles[j]
            nxt_util = util + c.utility
            nxt_verts = verts + c.vertices
            nxt_edges = edges + c.edges
            plans.append((nxt_util, nxt_verts, nxt_edges))
            extend(j + 1, used | cycle_sets[j], nxt_util, nxt_verts, nxt_edges)

    extend(0, frozenset(), 0.0, (), ())
    return plans


def _expected_best_plan_utility(
    graph: KPDGraph, vertex_ids: Sequence[int], max_cycle_len: int
) -> float:
    plans = _plans_within(graph, vertex_ids, max_cycle_len)
    if not plans:
        return 0.0

    # Failure items that at least one plan uses; sure failures kill the plans
    # that need them, sure survivors carry no scenario bit.
    fail_prob: dict[object, float] = {}
    for v in set().union(*(p[1] for p in plans)):
        fail_prob[v] = graph.vertex_by_id[v].vertex_failure_prob
    for e in set().union(*(p[2] for p in plans)):
        fail_prob[e] = graph.edge_failure_prob.get(e, 0.0)
    live = [p for p in plans if all(fail_prob[v] < 1.0 for v in p[1])
            and all(fail_prob[e] < 1.0 for e in p[2])]
    if not live:
        return 0.0
    items = sorted(
        {it for p in live for it in (*p[1], *p[2]) if fail_prob[it] > 0.0},
        key=repr,
    )
    n = len(items)
    if 1 << n > SCENARIO_CAP:
        raise UnitTooLarge(f"{n} failure items exceed the enumeration cap")
    bit = {it: 1 << (n - 1 - j) for j, it in enumerate(items)}

    # probs[s] = P(scenario s), where bit 1 means the item failed.
    probs = reduce(
        np.kron, ([1.0 - fail_prob[it], fail_prob[it]] for it in items), np.ones(1)
    )
    idx = np.arange(1 << n)
    value = np.zeros(1 << n)
    unfilled = np.ones(1 << n, dtype=bool)
    for util, verts, edges in sorted(live, key=lambda p: -p[0]):
        req = 0
        for it in (*verts, *edges):
            req |= bit.get(it, 0)
        ok = unfilled & ((idx & req) == 0)
        value[ok] = util
        unfilled &= ~ok
        if not unfilled.any():
            break
    return float(probs @ value)
