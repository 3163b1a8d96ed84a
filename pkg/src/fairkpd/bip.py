"""Branch and bound for binary programs over the LP core.

Nodes are explored best-bound first with creation order breaking ties, and
branching picks the variable closest to one half (lowest index on ties), so
runs are fully deterministic.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .lp import LinearProgram, LPSolution, LPStatus, NumericalFailure, WarmBasis, solve_lp

INTEGRALITY_TOL = 1e-7
BOUND_GAP_TOL = 1e-9


class NodeLimitExceeded(Exception):
    """Raised when branch and bound runs out of its node budget."""

    def __init__(self, message: str, best_bound: float, incumbent: float | None):
        super().__init__(message)
        self.best_bound = best_bound
        self.incumbent = incumbent


@dataclass(frozen=True)
class BinaryProgram:
    """min/max objective @ y subject to a_matrix @ y (<=, =, >=) rhs, y binary."""

    objective: np.ndarray
    sense: str
    a_matrix: np.ndarray
    relations: tuple[str, ...]
    rhs: np.ndarray

    def as_lp(self, lower: np.ndarray | None = None, upper: np.ndarray | None = None) -> LinearProgram:
        n = len(np.asarray(self.objective))
        return LinearProgram(
            objective=self.objective,
            sense=self.sense,
            a_matrix=self.a_matrix,
            relations=self.relations,
            rhs=self.rhs,
            lower=np.zeros(n) if lower is None else lower,
            upper=np.ones(n) if upper is None else upper,
        )


def solve_bip(bip: BinaryProgram, *, node_limit: int = 100000,
              good_enough: float | None = None,
              warm: WarmBasis | None = None) -> LPSolution:
    """Exact binary solve; objective sign handles max and min uniformly.

    With ``good_enough`` set, the caller only cares about solutions strictly
    better than that value: the search returns the first incumbent beating it
    (possibly suboptimal) and prunes nodes whose relaxation bound cannot beat
    it.  An INFEASIBLE result then means no feasible point beats the
    threshold, not necessarily that the program is infeasible.

    ``warm`` restarts every node relaxation from the given basis (callers
    re-solving the same constraint matrix under drifting objectives pass the
    previous root basis); the returned solution carries this solve's root
    basis for the next call.
    """
    sign = 1.0 if bip.sense == "max" else -1.0
    c = np.asarray(bip.objective, dtype=float)
    n = len(c)

    if n == 0:
        return LPSolution(
            status=LPStatus.OPTIMAL, x=np.zeros(0), objective=0.0,
            duals=None, certificate=None, iterations=0,
        )

    incumbent_x: np.ndarray | None = None
    incumbent_obj = -math.inf  # in sign-adjusted (maximization) terms
    prune_at = -math.inf if good_enough is None else sign * good_enough
    root_warm: WarmBasis | None = None

    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    seq = 0
    heapq.heappush(heap, (-math.inf, seq, np.zeros(n), np.ones(n)))
    nodes = 0

    while heap:
        parent_bound, _, lower, upper = heapq.heappop(heap)
        parent_bound = -parent_bound
        if parent_bound <= max(incumbent_obj + BOUND_GAP_TOL, prune_at):
            break  # best-first order: nothing left can improve
        nodes += 1
        if nodes > node_limit:
            raise NodeLimitExceeded(
                f"node limit {node_limit} exceeded",
                best_bound=sign * parent_bound,
                incumbent=None if incumbent_x is None else sign * incumbent_obj,
            )

        sol = solve_lp(bip.as_lp(lower, upper), warm=warm, want_warm=nodes == 1)
        if nodes == 1:
            root_warm = sol.warm
        if sol.status is LPStatus.INFEASIBLE:
            continue
        if sol.status is not LPStatus.OPTIMAL:
            raise NumericalFailure("binary relaxation reported unbounded")
        bound = sign * sol.objective
        if bound <= max(incumbent_obj + BOUND_GAP_TOL, prune_at):
            continue

        x = sol.x
        frac = np.abs(x - np.round(x))
        if float(np.max(frac)) <= INTEGRALITY_TOL:
            rounded = np.round(x) + 0.0  # normalize -0.0
            value = sign * float(c @ rounded)
            if _rows_feasible(bip, rounded) and value > incumbent_obj:
                incumbent_obj = value
                incumbent_x = rounded
                if good_enough is not None and incumbent_obj > prune_at:
                    break
            continue

        greedy = _greedy_incumbent(bip, x, sign * c, lower, upper)
        if greedy is not None:
            value, rounded = greedy
            if value > incumbent_obj:
                incumbent_obj = value
                incumbent_x = rounded
                if (good_enough is not None and incumbent_obj > prune_at) or \
                        parent_bound <= incumbent_obj + BOUND_GAP_TOL:
                    break

        branch = _pick_branch_variable(x, frac)
        for fix in (0.0, 1.0):
            child_lower = lower.copy()
            child_upper = upper.copy()
            child_lower[branch] = fix
            child_upper[branch] = fix
            seq += 1
            heapq.heappush(heap, (-bound, seq, child_lower, child_upper))

    if incumbent_x is None:
        return LPSolution(
            status=LPStatus.INFEASIBLE, x=None, objective=math.nan,
            duals=None, certificate=None, iterations=nodes, warm=root_warm,
        )
    return LPSolution(
        status=LPStatus.OPTIMAL,
        x=incumbent_x,
        objective=sign * incumbent_obj,
        duals=None,
        certificate=None,
        iterations=nodes,
        warm=root_warm,
    )


def _pick_branch_variable(x: np.ndarray, frac: np.ndarray) -> int:
    fractional = frac > INTEGRALITY_TOL
    score = np.where(fractional, np.abs(x - 0.5), math.inf)
    return int(np.argmin(score))


def _greedy_incumbent(bip: BinaryProgram, x: np.ndarray, gain: np.ndarray,
                      lower: np.ndarray, upper: np.ndarray
                      ) -> tuple[float, np.ndarray] | None:
    """Round a fractional relaxation into a feasible point, or give up.

    Greedily switches variables on in order of relaxation value (objective
    gain breaking ties) while no <= row is violated, honoring the node's
    branching fixings; rows of other senses are only checked at the end, so
    this can miss, in which case branching proceeds as usual.
    """
    a = bip.a_matrix
    le_rows = np.array([r == "<=" for r in bip.relations], dtype=bool)
    order = np.lexsort((np.arange(len(x)), -gain, -x))
    y = lower.copy()
    lhs = a @ y if a.size else np.zeros(len(bip.rhs))
    for j in order:
        if y[j] == 1.0 or upper[j] == 0.0:
            continue
        if x[j] <= INTEGRALITY_TOL and gain[j] <= 0.0:
            break  # remaining candidates can only hurt the objective
        col = a[:, j] if a.size else None
        if col is not None and np.any(le_rows & (lhs + col > bip.rhs + 1e-9)):
            continue
        y[j] = 1.0
        if col is not None:
            lhs = lhs + col
    if not _rows_feasible(bip, y):
        return None
    return float(gain @ y), y


def _rows_feasible(bip: BinaryProgram, y: np.ndarray, tol: float = 1e-7) -> bool:
    if bip.a_matrix.size == 0:
        return True
    ay = bip.a_matrix @ y
    scale = 1.0 + float(np.max(np.abs(bip.rhs))) if len(bip.rhs) else 1.0
    for i, rel in enumerate(bip.relations):
        if rel == "<=" and ay[i] > bip.rhs[i] + tol * scale:
            return False
        if rel == ">=" and ay[i] < bip.rhs[i] - tol * scale:
            return False
        if rel == "=" and abs(ay[i] - bip.rhs[i]) > tol * scale:
            return False
    return True
