"""Randomized allocation policies under selection-rate fairness constraints.

Deterministic plans cannot hit fractional selection-rate targets, so the
fairness-constrained problems here optimize over probability distributions on
exchange plans.  Enumerating all plans is hopeless; instead a restricted
master problem proposes selection marginals and an auxiliary subproblem either
certifies them implementable (yielding an optimality cut and, at termination,
the explicit distribution) or returns a separating feasibility cut.  The
auxiliary problem itself is solved by column generation, pricing new plans via
max-weight vertex-disjoint packing.

Two criteria share the machinery:

* calibration fairness: maximize expected utility subject to per-stratum
  bounds on the gap between the two protected groups' average selection rate,
* individual fairness: minimize total deviation of selection rates from their
  mean subject to an expected-utility floor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .alloc import ExchangePlan, solve_max_utility
from .bip import BinaryProgram, solve_bip
from .graph import KPDGraph
from .lp import LinearProgram, LPStatus, solve_lp
from .recourse import ExchangeUnit

log = logging.getLogger(__name__)

GAP_REL = 1e-6
FAIRNESS_TOL = 1e-7
PRICING_TOL = 1e-7
MASTER_ITERATION_LIMIT = 500
CG_ITERATION_LIMIT = 5000


class FairSolveIterationLimit(Exception):
    """Master loop hit its iteration cap; carries the remaining bound gap."""

    def __init__(self, message: str, gap: float, iterations: int) -> None:
        super().__init__(f"{message} (gap {gap:.3e} after {iterations} iterations)")
        self.gap = gap
        self.iterations = iterations


class ColumnGenerationStall(Exception):
    """Pricing failed to certify the auxiliary problem within its cap."""


class Stratum(NamedTuple):
    """One comparison cell: two protected-group vertex lists and a gap tolerance."""

    label: str
    group0: tuple[int, ...]
    group1: tuple[int, ...]
    tolerance: float


@dataclass(frozen=True)
class CalibrationFairnessSpec:
    """Per-stratum caps on the difference of group-average selection rates."""

    strata: tuple[Stratum, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "strata", tuple(self.strata))
        for s in self.strata:
            if s.tolerance < 0:
                raise ValueError(f"stratum {s.label!r} has negative tolerance")
            if not s.group0 or not s.group1:
                raise ValueError(f"stratum {s.label!r} must have both groups nonempty")
            if set(s.group0) & set(s.group1):
                raise ValueError(f"stratum {s.label!r} groups overlap")

    @classmethod
    def from_graph(cls, graph: KPDGraph, preset: str = "strong") -> "CalibrationFairnessSpec":
        """Stratify by sensitization class, split by protected feature.

        Tolerances: 0.5 / max(group sizes) for the strong preset, 0.5 / min
        for the weak one.  Strata where either protected group is empty are
        skipped (the rate gap is undefined there).
        """
        if preset not in ("strong", "weak"):
            raise ValueError(f"unknown preset {preset!r}")
        classes = sorted({v.sensitization_class for v in graph.vertices})
        strata = []
        for r in classes:
            g0 = tuple(v.id for v in graph.vertices
                       if v.sensitization_class == r and v.protected_feature == 0)
            g1 = tuple(v.id for v in graph.vertices
                       if v.sensitization_class == r and v.protected_feature == 1)
            if not g0 or not g1:
                log.debug("skipping sensitization class %s: one group empty", r)
                continue
            sizes = (len(g0), len(g1))
            tol = 0.5 / max(sizes) if preset == "strong" else 0.5 / min(sizes)
            strata.append(Stratum(f"class-{r}", tuple(sorted(g0)), tuple(sorted(g1)), tol))
        return cls(tuple(strata))


@dataclass(frozen=True)
class RandomizedPolicy:
    """Distribution over exchange plans with its induced marginals."""

    vertex_ids: tuple[int, ...]
    support: tuple[ExchangePlan, ...]
    probabilities: np.ndarray
    unit_marginals: np.ndarray
    vertex_marginals: np.ndarray
    expected_utility: float

    def marginal_of(self, vertex_id: int) -> float:
        return float(self.vertex_marginals[self.vertex_ids.index(vertex_id)])

    def validate(self, units: Sequence[ExchangeUnit], atol: float = 1e-8) -> None:
        """Re-derive marginals from the support and check every consistency claim."""
        p = self.probabilities
        if p.size and p.min() < -1e-12:
            raise ValueError("negative plan probability")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}")
        x = np.zeros(len(units))
        pi = np.zeros(len(self.vertex_ids))
        pos = {v: i for i, v in enumerate(self.vertex_ids)}
        for plan, prob in zip(self.support, p):
            seen: set[int] = set()
            for j in plan.unit_indices:
                x[j] += prob
                overlap = seen.intersection(units[j].vertices)
                if overlap:
                    raise ValueError(f"plan reuses vertices {sorted(overlap)}")
                seen.update(units[j].vertices)
                for v in units[j].vertices:
                    pi[pos[v]] += prob
        if np.max(np.abs(x - self.unit_marginals), initial=0.0) > atol:
            raise ValueError("unit marginals inconsistent with support")
        if np.max(np.abs(pi - self.vertex_marginals), initial=0.0) > atol:
            raise ValueError("vertex marginals inconsistent with support")
        if self.vertex_marginals.min(initial=0.0) < -atol or \
                self.vertex_marginals.max(initial=0.0) > 1.0 + atol:
            raise ValueError("vertex marginal outside [0, 1]")
        eu = float(sum(plan.utility * prob for plan, prob in zip(self.support, p)))
        if abs(eu - self.expected_utility) > atol * (1.0 + abs(eu)):
            raise ValueError("expected utility inconsistent with support")


class CutPool:
    """Optimality and feasibility cuts accumulated by the master loop."""

    def __init__(self) -> None:
        self.optimality: list[tuple[np.ndarray, float]] = []
        self.feasibility: list[tuple[np.ndarray, float]] = []
        self._keys: set[tuple] = set()

    def add_optimality(self, theta: np.ndarray, beta: float) -> bool:
        key = ("opt", theta.tobytes(), float(beta))
        if key in self._keys:
            return False
        self._keys.add(key)
        self.optimality.append((theta.copy(), float(beta)))
        return True

    def add_feasibility(self, theta: np.ndarray, beta: float) -> bool:
        key = ("feas", theta.tobytes(), float(beta))
        if key in self._keys:
            return False
        self._keys.add(key)
        self.feasibility.append((theta.copy(), float(beta)))
        return True


class PlanPool:
    """Generated plans (unit index sets) with their vertex covers and utilities.

    Shared workspace for one solve: the unit incidence matrix is built once
    and plans only ever get added.  The LPs built on the pool use the
    ``active`` subset of plans, which also only grows (so simplex restart
    tokens stay valid); inactive plans wait in the pool until current duals
    say they matter.  The empty plan is always plan zero and always active.
    """

    def __init__(self, units: Sequence[ExchangeUnit], vertex_ids: Sequence[int]) -> None:
        self.units = tuple(units)
        self.vertex_ids = tuple(vertex_ids)
        self._pos = {v: i for i, v in enumerate(self.vertex_ids)}
        self.unit_cover = np.zeros((len(units), len(self.vertex_ids)))
        for j, unit in enumerate(units):
            for v in unit.vertices:
                self.unit_cover[j, self._pos[v]] = 1.0
        self.unit_cover_bool = self.unit_cover > 0.0
        covered = self.unit_cover.T.any(axis=1)
        self.pricing_matrix = self.unit_cover.T[covered]
        self.pricing_warm = None
        self.unit_utilities = np.array([u.utility for u in units], dtype=float)
        self.plans: list[tuple[int, ...]] = []
        self.plan_cover = np.zeros((0, len(self.vertex_ids)))
        self.plan_utilities = np.zeros(0)
        self._keys: dict[tuple[int, ...], int] = {}
        self.active: list[int] = []
        self._active_set: set[int] = set()
        self.utility_cap: float | None = None
        # Simplex restart tokens threaded between successive solves.
        self.aux_warm = None
        self.primal_warm = None
        self.add_active(())

    @property
    def n_plans(self) -> int:
        return len(self.plans)

    @property
    def covered_vertices(self) -> np.ndarray:
        return self.unit_cover.any(axis=0) if len(self.units) else \
            np.zeros(len(self.vertex_ids), dtype=bool)

    def add(self, unit_indices: Iterable[int]) -> bool:
        key = tuple(sorted(unit_indices))
        if key in self._keys:
            return False
        self._keys[key] = len(self.plans)
        cover = self.unit_cover[list(key)].sum(axis=0) if key else \
            np.zeros(len(self.vertex_ids))
        if cover.max(initial=0.0) > 1.0:
            raise ValueError(f"units {key} are not vertex-disjoint")
        self.plans.append(key)
        self.plan_cover = np.vstack([self.plan_cover, cover[None, :]])
        self.plan_utilities = np.append(
            self.plan_utilities, float(self.unit_utilities[list(key)].sum()) if key else 0.0
        )
        return True

    def activate(self, t: int) -> bool:
        if t in self._active_set:
            return False
        self._active_set.add(t)
        self.active.append(t)
        return True

    def add_active(self, unit_indices: Iterable[int]) -> bool:
        key = tuple(sorted(unit_indices))
        fresh = self.add(key)
        self.activate(self._keys[key])
        return fresh

    def scatter(self, weights_on_active: np.ndarray) -> np.ndarray:
        """Expand active-indexed plan weights to full pool length."""
        full = np.zeros(self.n_plans)
        full[self.active] = weights_on_active
        return full

    def seed_from_fractional(self, x: np.ndarray) -> None:
        """Greedy round a fractional unit selection into a plan and pool it."""
        order = np.argsort(-x, kind="stable")
        taken = np.zeros(len(self.vertex_ids), dtype=bool)
        picked = []
        for j in order:
            if x[j] <= 1e-9:
                break
            mask = self.unit_cover[j] > 0
            if not (taken & mask).any():
                picked.append(int(j))
                taken |= mask
        self.add_active(picked)

    def seed_decomposition(self, x: np.ndarray, max_plans: int | None = None) -> int:
        """Peel a fractional unit selection into plans and pool them all.

        Repeatedly greedy-packs units by remaining fractional weight, then
        subtracts the smallest weight among the packed units so at least one
        unit leaves the support per round.  When the selection is (close to)
        a plan mixture this recovers a near-complete basis for it, which
        saves the auxiliary solve most of its pricing rounds.
        """
        residual = np.asarray(x, dtype=float).copy()
        cap = 2 * len(self.vertex_ids) + 10 if max_plans is None else max_plans
        added = 0
        for _ in range(cap):
            order = np.argsort(-residual, kind="stable")
            taken = np.zeros(len(self.vertex_ids), dtype=bool)
            picked = []
            for j in order:
                if residual[j] <= 1e-9:
                    break
                mask = self.unit_cover[j] > 0
                if not (taken & mask).any():
                    picked.append(int(j))
                    taken |= mask
            if not picked:
                break
            if self.add_active(picked):
                added += 1
            residual[picked] -= float(residual[picked].min())
        return added


class AuxiliaryResult(NamedTuple):
    """Outcome of one auxiliary solve at fixed marginals.

    ``feasible`` says the marginals are a plan mixture and ``delta`` holds
    its weights over the pool.  ``value`` is the best expected utility at
    those marginals when feasible, else the penalized value.  ``cut_kind``
    tells the master how to use (theta, beta): an "optimality" pair bounds
    eta <= theta @ pi + beta over every implementable pi, a "feasibility"
    pair satisfies theta @ pi + beta <= 0 there.
    """

    feasible: bool
    value: float
    theta: np.ndarray
    beta: float
    delta: np.ndarray | None
    cut_kind: str = "optimality"


def _max_weight_packing(units: Sequence[ExchangeUnit], weights: np.ndarray,
                        good_enough: float | None = None,
                        pool: PlanPool | None = None,
                        ) -> tuple[tuple[int, ...], float]:
    """Best vertex-disjoint unit selection under arbitrary weights.

    ``good_enough`` passes through to the branch and bound: the first packing
    strictly better than it is returned as-is, and if no packing beats it the
    empty packing stands in (its reported value 0 is only ever used through
    that same threshold comparison).  With a ``pool`` the solve reuses the
    pool's fixed incidence matrix and restarts the relaxation from the
    previous call's basis, which makes repeated pricing rounds cheap; without
    one, units with nonpositive weight are dropped and the matrix is built
    fresh.
    """
    if pool is not None:
        a = pool.pricing_matrix
        sol = solve_bip(BinaryProgram(weights, "max", a, ("<=",) * a.shape[0],
                                      np.ones(a.shape[0])),
                        good_enough=good_enough, warm=pool.pricing_warm)
        if sol.warm is not None:
            pool.pricing_warm = sol.warm
        if sol.x is None:
            return (), 0.0
        chosen = tuple(sorted(int(j) for j in np.nonzero(sol.x > 0.5)[0]))
        return chosen, float(sol.objective)
    keep = np.nonzero(weights > 0.0)[0]
    if keep.size == 0:
        return (), 0.0
    touched: dict[int, list[int]] = {}
    for col, j in enumerate(keep):
        for v in units[j].vertices:
            touched.setdefault(v, []).append(col)
    a = np.zeros((len(touched), keep.size))
    for i, v in enumerate(sorted(touched)):
        a[i, touched[v]] = 1.0
    sol = solve_bip(BinaryProgram(weights[keep], "max", a, ("<=",) * a.shape[0],
                                  np.ones(a.shape[0])), good_enough=good_enough)
    if sol.x is None:
        return (), 0.0
    chosen = tuple(sorted(int(keep[c]) for c in range(keep.size) if sol.x[c] > 0.5))
    return chosen, float(sol.objective)


def price_plans(units: Sequence[ExchangeUnit], theta: np.ndarray, beta: float,
                vertex_ids: Sequence[int], good_enough: float | None = None,
                ) -> tuple[tuple[int, ...], float, float]:
    """Most-violated dual constraint searched over all plans.

    Maximizes sum of (unit utility - sum of theta over the unit's vertices)
    across vertex-disjoint selections; a violation (value - beta) above zero
    means the returned plan's dual constraint is violated.  A ``good_enough``
    packing value makes the search stop at the first plan beating it, which
    is enough to keep column generation moving.
    """
    pos = {v: i for i, v in enumerate(vertex_ids)}
    adj = np.array([
        unit.utility - sum(theta[pos[v]] for v in unit.vertices) for unit in units
    ])
    chosen, value = _max_weight_packing(units, adj, good_enough)
    return chosen, value, value - beta


SLACK_TOL = 1e-7
DUAL_SMOOTHING = 0.8


def _peel_packings(pool: PlanPool, weights: np.ndarray, x: np.ndarray,
                   threshold: float, max_plans: int = 8) -> list[tuple[int, ...]]:
    """Round a fractional packing into integral ones worth pooling.

    Peels the support of x in residual order into vertex-disjoint
    selections, keeping any whose total weight beats the threshold.
    """
    cover = pool.unit_cover_bool
    resid = x.copy()
    found: list[tuple[int, ...]] = []
    for _ in range(max_plans):
        order = np.argsort(-resid, kind="stable")
        taken = np.zeros(cover.shape[1], dtype=bool)
        picked: list[int] = []
        value = 0.0
        for j in order:
            if resid[j] <= 1e-9:
                break
            if weights[j] > 0.0 and not (taken & cover[j]).any():
                picked.append(int(j))
                value += float(weights[j])
                taken |= cover[j]
        if not picked:
            break
        if value > threshold:
            found.append(tuple(sorted(picked)))
        resid[picked] -= resid[picked].min()
    return found


ACTIVATE_CAP = 50


def _price_round(pool: PlanPool, weights: np.ndarray, threshold: float,
                 plan_values: np.ndarray, exact: bool = True) -> bool:
    """One pricing pass: activate at least one plan above the threshold.

    Returns False when no plan the pool does not already use can beat the
    threshold; at the true restricted duals that is the auxiliary's
    termination certificate.  ``plan_values`` scores every pooled plan under
    the current duals, so dormant pool entries get reactivated before
    anything is searched for.  After that the pass runs the packing LP
    relaxation, whose optimum bounds every integral packing (a low value
    certifies the miss without a binary solve) and whose support peels into
    strong candidates; the exact binary solve is the last resort, and runs
    only when ``exact`` is set.  Smoothed pricing passes clear that flag:
    they exist to harvest cheap columns, and a binary certification at an
    off-optimum dual point would prove nothing.
    """
    dormant = np.ones(pool.n_plans, dtype=bool)
    dormant[pool.active] = False
    backlog = np.nonzero(dormant & (plan_values > threshold))[0]
    if backlog.size:
        order = backlog[np.argsort(-plan_values[backlog], kind="stable")]
        for t in order[:ACTIVATE_CAP]:
            pool.activate(int(t))
        return True
    added = False
    a = pool.pricing_matrix
    n, m = len(weights), a.shape[0]
    lp = LinearProgram(weights, "max", a, ("<=",) * m, np.ones(m),
                       np.zeros(n), np.ones(n))
    sol = solve_lp(lp, warm=pool.pricing_warm, want_warm=True)
    if sol.status is not LPStatus.OPTIMAL:
        raise ColumnGenerationStall(f"pricing relaxation reported {sol.status}")
    pool.pricing_warm = sol.warm
    if float(sol.objective) <= threshold:
        return False
    for plan in _peel_packings(pool, weights, sol.x, threshold):
        added |= pool.add_active(plan)
    if added:
        return True
    if not exact:
        return False
    chosen, reach = _max_weight_packing(pool.units, weights,
                                        good_enough=threshold, pool=pool)
    if reach <= threshold:
        return False
    # At a smoothed dual point the binary search may surface a plan that is
    # already active (active columns only price out at the true duals).
    # Report it as a miss so the caller recentres and retries unsmoothed.
    return pool.add_active(chosen)


def _solve_slack_sp(pool: PlanPool, pi: np.ndarray, utilities_on: bool,
                    penalty: float) -> "LPSolution":
    """Restricted auxiliary LP with signed slack columns on the marginals.

    Columns are +/- slack per vertex followed by the active plans (slacks
    first so plan columns appended between solves keep their index, which
    lets the simplex restart from the previous basis).  Rows are the
    marginal equalities then the convexity row.  The slacks make the LP
    feasible for any pi, so the solve has no failure branch, and their cost
    bounds the marginal duals, which keeps column generation from chasing
    wild dual directions.
    """
    act = pool.active
    n_p, n_v = len(act), len(pool.vertex_ids)
    eye = np.eye(n_v)
    a = np.zeros((n_v + 1, 2 * n_v + n_p))
    a[:n_v, :n_v] = eye
    a[:n_v, n_v:2 * n_v] = -eye
    a[:n_v, 2 * n_v:] = pool.plan_cover[act].T
    a[n_v, 2 * n_v:] = 1.0
    rhs = np.append(pi, 1.0)
    objective = np.concatenate([
        np.full(2 * n_v, -penalty),
        pool.plan_utilities[act] if utilities_on else np.zeros(n_p),
    ])
    n_cols = 2 * n_v + n_p
    lp = LinearProgram(objective, "max", a, ("=",) * (n_v + 1), rhs,
                       np.zeros(n_cols), np.full(n_cols, np.inf))
    sol = solve_lp(lp, warm=pool.aux_warm, want_warm=True)
    if sol.status != LPStatus.OPTIMAL:
        raise ColumnGenerationStall(f"slack subproblem reported {sol.status}")
    pool.aux_warm = sol.warm
    return sol


def _plan_utility_cap(pool: PlanPool) -> float:
    """Upper bound on any single plan's utility via the packing relaxation.

    Solved once per pool; the fractional maximum dominates every integral
    packing, including ones not generated yet.  Doubles as a primer for the
    pricing relaxation's restart token.
    """
    if pool.utility_cap is None:
        a = pool.pricing_matrix
        n, m = len(pool.unit_utilities), a.shape[0]
        if n == 0 or m == 0:
            pool.utility_cap = 0.0
            return pool.utility_cap
        lp = LinearProgram(pool.unit_utilities, "max", a, ("<=",) * m,
                           np.ones(m), np.zeros(n), np.ones(n))
        sol = solve_lp(lp, want_warm=True)
        if sol.status is not LPStatus.OPTIMAL:
            raise ColumnGenerationStall(f"packing relaxation reported {sol.status}")
        pool.pricing_warm = sol.warm
        pool.utility_cap = float(sol.objective)
    return pool.utility_cap


def solve_auxiliary(pi: np.ndarray, pool: PlanPool,
                    cg_limit: int = CG_ITERATION_LIMIT) -> AuxiliaryResult:
    """Price plans at fixed marginals pi until the penalized LP is certified.

    The restricted LP maximizes mixture utility with signed slacks absorbing
    any gap between the mixture's marginals and pi.  A zero-slack certified
    optimum is exact at any penalty: the mixture is feasible and beats every
    feasible rival, which pays the same zero penalty.  Either way the duals
    (theta, beta) price out every plan, so u(delta) <= theta @ pi' + beta
    holds for every implementable pi' and they always hand the master an
    optimality cut.

    The penalty starts small and escalates only while slack persists at a
    certificate, up to a cap that strictly dominates any plan utility; at
    the cap the L1 penalty is exact, so surviving slack proves pi is no
    mixture.  Small penalties matter because restricted duals live in
    [-penalty, penalty]: a large penalty lets them oscillate wildly while
    the column set is thin, which is what stalls column generation.

    Pricing is additionally dual-smoothed (Wentges): plans are priced at a
    blend toward a stability center, recentring whenever the smoothed point
    prices nothing.  Certificates are only ever issued at the true duals.
    """
    n_v = len(pool.vertex_ids)
    uncovered = ~pool.covered_vertices & (pi > 1e-12)
    if uncovered.any():
        theta_hat = np.zeros(n_v)
        theta_hat[int(np.argmax(uncovered))] = 1.0
        return AuxiliaryResult(False, 0.0, theta_hat, 0.0, None, "feasibility")

    penalty_cap = 1.0 + 2.0 * _plan_utility_cap(pool)
    penalty = min(4.0, penalty_cap)
    center_t: np.ndarray | None = None
    center_b = 0.0
    rounds = 0
    while True:
        rounds += 1
        if rounds > cg_limit:
            raise ColumnGenerationStall(
                f"no pricing certificate after {cg_limit} rounds")
        sol = _solve_slack_sp(pool, pi, utilities_on=True, penalty=penalty)
        theta, beta = sol.duals[:n_v], float(sol.duals[n_v])
        if center_t is None:
            center_t, center_b = theta, beta
        priced = False
        for blend in (DUAL_SMOOTHING, 0.0):
            theta_s = blend * center_t + (1.0 - blend) * theta
            beta_s = blend * center_b + (1.0 - blend) * beta
            tol = PRICING_TOL * (1.0 + abs(beta_s))
            weights = pool.unit_utilities - pool.unit_cover @ theta_s
            plan_values = pool.plan_utilities - pool.plan_cover @ theta_s
            if _price_round(pool, weights, beta_s + tol, plan_values,
                            exact=blend == 0.0):
                priced = True
                break
            # Mispricing: the smoothed point separates nothing, so move the
            # center onto the true duals and retry unsmoothed.
            center_t, center_b = theta, beta
        if priced:
            continue
        slack_mass = float(np.sum(sol.x[:2 * n_v]))
        if slack_mass > SLACK_TOL:
            if penalty < penalty_cap:
                # Slack may only mean the penalty is too cheap; raise it and
                # keep pricing.  The dual scale jumps, so restart smoothing.
                penalty = min(penalty * 8.0, penalty_cap)
                center_t = None
                continue
            # Exact penalty: persistent slack certifies pi is no mixture.
            # The duals still give a valid (and violated) optimality cut.
            return AuxiliaryResult(False, float(sol.objective), theta, beta, None)
        delta = pool.scatter(sol.x[2 * n_v:])
        return AuxiliaryResult(True, float(pool.plan_utilities @ delta),
                               theta, beta, delta)


def _fairness_rows_on_vertices(spec: CalibrationFairnessSpec,
                               pos: dict[int, int], n_v: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.zeros((2 * len(spec.strata), n_v))
    rhs = np.zeros(2 * len(spec.strata))
    for j, s in enumerate(spec.strata):
        coeff = np.zeros(n_v)
        for v in s.group0:
            coeff[pos[v]] += 1.0 / len(s.group0)
        for v in s.group1:
            coeff[pos[v]] -= 1.0 / len(s.group1)
        rows[2 * j] = coeff
        rows[2 * j + 1] = -coeff
        rhs[2 * j] = rhs[2 * j + 1] = s.tolerance
    return rows, rhs


def solve_master(pool: PlanPool, spec: CalibrationFairnessSpec | None,
                 cuts: CutPool) -> tuple[np.ndarray, np.ndarray, float]:
    """Propose (x, pi, eta): max eta over the cut-constrained marginal polytope.

    Internally pi is eliminated (pi = cover.T @ x), which halves the LP; the
    returned pi is recomputed from x.  An empty optimality-cut set would leave
    eta unbounded, so the trivial bound (theta = 0, beta = total utility) is
    injected first.
    """
    if not cuts.optimality:
        cuts.add_optimality(np.zeros(len(pool.vertex_ids)),
                            float(np.sum(pool.unit_utilities)))
    n_u = len(pool.units)
    n_v = len(pool.vertex_ids)
    m_cov = pool.unit_cover  # (n_u, n_v)
    rows: list[np.ndarray] = []
    rels: list[str] = []
    rhs: list[float] = []

    covered = np.nonzero(pool.covered_vertices)[0]
    for v_idx in covered:
        row = np.zeros(n_u + 1)
        row[:n_u] = m_cov[:, v_idx]
        rows.append(row)
        rels.append("<=")
        rhs.append(1.0)
    if spec is not None:
        pos = {v: i for i, v in enumerate(pool.vertex_ids)}
        frows, frhs = _fairness_rows_on_vertices(spec, pos, n_v)
        for i in range(frows.shape[0]):
            row = np.zeros(n_u + 1)
            row[:n_u] = m_cov @ frows[i]
            rows.append(row)
            rels.append("<=")
            rhs.append(float(frhs[i]))
    # eta <= sum of unit utilities selected: valid since plan utility is
    # additive over its units; tightens the first master solves a lot.
    row = np.zeros(n_u + 1)
    row[:n_u] = -pool.unit_utilities
    row[n_u] = 1.0
    rows.append(row)
    rels.append("<=")
    rhs.append(0.0)
    for theta, beta in cuts.optimality:
        row = np.zeros(n_u + 1)
        row[:n_u] = -(m_cov @ theta)
        row[n_u] = 1.0
        rows.append(row)
        rels.append("<=")
        rhs.append(float(beta))
    for theta, beta in cuts.feasibility:
        row = np.zeros(n_u + 1)
        row[:n_u] = m_cov @ theta
        rows.append(row)
        rels.append("<=")
        rhs.append(float(-beta))

    objective = np.zeros(n_u + 1)
    objective[n_u] = 1.0
    lower = np.zeros(n_u + 1)
    upper = np.append(np.ones(n_u), np.inf)
    lp = LinearProgram(objective, "max", np.array(rows), tuple(rels),
                       np.array(rhs), lower, upper)
    sol = solve_lp(lp)
    if sol.status != LPStatus.OPTIMAL:
        raise RuntimeError(f"master relaxation should be solvable, got {sol.status}")
    x = sol.x[:n_u]
    pi = m_cov.T @ x if n_u else np.zeros(n_v)
    return x, pi, float(sol.objective)


def recover_policy(pool: PlanPool, delta: np.ndarray,
                   min_probability: float = 1e-12) -> RandomizedPolicy:
    """Materialize the distribution a restricted primal found.

    Solver residue and dropped near-zero weights leave the raw weights a hair
    off a distribution, so they are renormalized before the marginals are
    accumulated; the policy is then exactly self-consistent.
    """
    kept: list[tuple[int, float]] = []
    for t, prob in enumerate(delta):
        if prob > min_probability:
            kept.append((t, float(prob)))
    total = sum(prob for _, prob in kept)
    support: list[ExchangePlan] = []
    probs: list[float] = []
    x = np.zeros(len(pool.units))
    pi = np.zeros(len(pool.vertex_ids))
    for t, raw in kept:
        prob = raw / total
        idx = pool.plans[t]
        matched = frozenset(v for j in idx for v in pool.units[j].vertices)
        support.append(ExchangePlan(idx, float(pool.plan_utilities[t]), matched))
        probs.append(prob)
        for j in idx:
            x[j] += prob
        pi += prob * pool.plan_cover[t]
    p = np.array(probs)
    eu = float(sum(plan.utility * prob for plan, prob in zip(support, p)))
    return RandomizedPolicy(pool.vertex_ids, tuple(support), p, x, pi, eu)


def point_mass_policy(graph: KPDGraph, units: Sequence[ExchangeUnit],
                      plan: ExchangePlan) -> RandomizedPolicy:
    """Degenerate policy selecting one plan with probability 1."""
    pool = PlanPool(units, graph.sorted_ids)
    pool.add(plan.unit_indices)
    delta = np.zeros(pool.n_plans)
    delta[pool.plans.index(tuple(sorted(plan.unit_indices)))] = 1.0
    return recover_policy(pool, delta)


def _master_loop(pool: PlanPool, cuts: CutPool, solve_master_fn, terminate_fn,
                 iteration_limit: int, trace: list | None,
                 primal_fn=None) -> RandomizedPolicy:
    """Alternate master proposals with auxiliary checks until the gap closes.

    ``primal_fn(eta)``, when given, is tried after each auxiliary solve: it
    optimizes over the mixtures the pool can already express and returns a
    finished policy once that matches the master bound.  The master bound is
    valid throughout, so this only ever shortens the loop, never changes the
    answer beyond the shared gap tolerance.
    """
    gap = np.inf
    for it in range(iteration_limit):
        x, pi, eta = solve_master_fn()
        pool.seed_decomposition(x)
        aux = solve_auxiliary(pi, pool)
        if trace is not None:
            trace.append({"iteration": it, "eta": eta,
                          "aux_feasible": aux.feasible,
                          "aux_value": aux.value if aux.feasible else None})
        if aux.feasible:
            gap = eta - aux.value
            if terminate_fn(eta, aux):
                return recover_policy(pool, aux.delta)
        if aux.cut_kind == "feasibility":
            margin = float(pi @ aux.theta + aux.beta)
            if margin <= 1e-9:
                raise FairSolveIterationLimit(
                    "feasibility cut fails to separate", gap, it + 1)
            if not cuts.add_feasibility(aux.theta, aux.beta):
                raise FairSolveIterationLimit("feasibility cut repeated", gap, it + 1)
        elif not cuts.add_optimality(aux.theta, aux.beta):
            raise FairSolveIterationLimit("optimality cut repeated", gap, it + 1)
        if primal_fn is not None:
            policy = primal_fn(eta)
            if policy is not None:
                return policy
    raise FairSolveIterationLimit("master iteration cap reached", gap, iteration_limit)


def _restricted_calibration_primal(pool: PlanPool,
                                   spec: CalibrationFairnessSpec) -> "LPSolution":
    """Best mixture of pooled plans under the fairness caps.

    Always solvable: the empty plan has zero rate gap everywhere.  The value
    is a true lower bound on the constrained optimum, and the weights are a
    ready policy whenever that bound meets the master's upper bound.
    """
    act = pool.active
    n_p, n_v = len(act), len(pool.vertex_ids)
    pos = {v: i for i, v in enumerate(pool.vertex_ids)}
    frows, frhs = _fairness_rows_on_vertices(spec, pos, n_v)
    a = np.zeros((1 + frows.shape[0], n_p))
    a[0] = 1.0
    a[1:] = frows @ pool.plan_cover[act].T
    rels = ("=",) + ("<=",) * frows.shape[0]
    rhs = np.concatenate([[1.0], frhs])
    lp = LinearProgram(pool.plan_utilities[act], "max", a, rels, rhs,
                       np.zeros(n_p), np.full(n_p, np.inf))
    sol = solve_lp(lp, warm=pool.primal_warm, want_warm=True)
    if sol.status != LPStatus.OPTIMAL:
        raise ColumnGenerationStall(f"restricted primal reported {sol.status}")
    pool.primal_warm = sol.warm
    return sol


def solve_calibration_fair(graph: KPDGraph, units: Sequence[ExchangeUnit],
                           spec: CalibrationFairnessSpec,
                           iteration_limit: int = MASTER_ITERATION_LIMIT,
                           trace: list | None = None) -> RandomizedPolicy:
    """Max expected utility subject to the per-stratum selection-rate caps."""
    pool = PlanPool(units, graph.sorted_ids)
    cuts = CutPool()

    def master() -> tuple[np.ndarray, np.ndarray, float]:
        return solve_master(pool, spec, cuts)

    def done(eta: float, aux: AuxiliaryResult) -> bool:
        return eta - aux.value <= GAP_REL * (1.0 + abs(eta))

    def primal(eta: float) -> RandomizedPolicy | None:
        sol = _restricted_calibration_primal(pool, spec)
        if eta - float(sol.objective) <= GAP_REL * (1.0 + abs(eta)):
            return recover_policy(pool, pool.scatter(sol.x))
        return None

    return _master_loop(pool, cuts, master, done, iteration_limit, trace, primal)


def _solve_individual_master(pool: PlanPool, cuts: CutPool,
                             floor: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Min total |pi_v - mean(pi)| with eta (achievable utility) floored.

    Columns are [x, d, eta] where d_v are deviation variables; pi is again
    the expression cover.T @ x and mean(pi) = (unit sizes @ x) / N.
    """
    if not cuts.optimality:
        cuts.add_optimality(np.zeros(len(pool.vertex_ids)),
                            float(np.sum(pool.unit_utilities)))
    n_u = len(pool.units)
    n_v = len(pool.vertex_ids)
    m_cov = pool.unit_cover
    sizes = m_cov.sum(axis=1)  # vertices per unit
    n_cols = n_u + n_v + 1
    eta_col = n_u + n_v
    rows: list[np.ndarray] = []
    rels: list[str] = []
    rhs: list[float] = []

    for v_idx in np.nonzero(pool.covered_vertices)[0]:
        row = np.zeros(n_cols)
        row[:n_u] = m_cov[:, v_idx]
        rows.append(row)
        rels.append("<=")
        rhs.append(1.0)
    for v_idx in range(n_v):
        base = m_cov[:, v_idx] - sizes / n_v  # pi_v - mean(pi) in x terms
        row = np.zeros(n_cols)
        row[:n_u] = base
        row[n_u + v_idx] = -1.0
        rows.append(row)
        rels.append("<=")
        rhs.append(0.0)
        row = np.zeros(n_cols)
        row[:n_u] = -base
        row[n_u + v_idx] = -1.0
        rows.append(row)
        rels.append("<=")
        rhs.append(0.0)
    row = np.zeros(n_cols)
    row[:n_u] = -pool.unit_utilities
    row[eta_col] = 1.0
    rows.append(row)
    rels.append("<=")
    rhs.append(0.0)
    for theta, beta in cuts.optimality:
        row = np.zeros(n_cols)
        row[:n_u] = -(m_cov @ theta)
        row[eta_col] = 1.0
        rows.append(row)
        rels.append("<=")
        rhs.append(float(beta))
    for theta, beta in cuts.feasibility:
        row = np.zeros(n_cols)
        row[:n_u] = m_cov @ theta
        rows.append(row)
        rels.append("<=")
        rhs.append(float(-beta))

    objective = np.zeros(n_cols)
    objective[n_u:eta_col] = 1.0
    lower = np.zeros(n_cols)
    lower[eta_col] = floor
    upper = np.concatenate([np.ones(n_u + n_v), [np.inf]])
    lp = LinearProgram(objective, "min", np.array(rows), tuple(rels),
                       np.array(rhs), lower, upper)
    sol = solve_lp(lp)
    if sol.status != LPStatus.OPTIMAL:
        raise RuntimeError(f"deviation master should be solvable, got {sol.status}")
    x = sol.x[:n_u]
    pi = m_cov.T @ x if n_u else np.zeros(n_v)
    return x, pi, float(sol.objective)


def _restricted_individual_primal(pool: PlanPool, floor: float) -> "LPSolution":
    """Min rate deviation over pooled mixtures meeting the utility floor.

    Columns are deviation variables then the pooled plans (append-stable for
    warm restarts); solvable whenever some pooled plan meets the floor.
    """
    act = pool.active
    n_p, n_v = len(act), len(pool.vertex_ids)
    cover = pool.plan_cover[act]
    base = cover - cover.sum(axis=1, keepdims=True) / n_v
    n_cols = n_v + n_p
    rows = np.zeros((2 + 2 * n_v, n_cols))
    rels: list[str] = ["=", ">="]
    rows[0, n_v:] = 1.0
    rows[1, n_v:] = pool.plan_utilities[act]
    rhs = [1.0, floor]
    for v_idx in range(n_v):
        rows[2 + 2 * v_idx, n_v:] = base[:, v_idx]
        rows[2 + 2 * v_idx, v_idx] = -1.0
        rows[3 + 2 * v_idx, n_v:] = -base[:, v_idx]
        rows[3 + 2 * v_idx, v_idx] = -1.0
        rels += ["<=", "<="]
        rhs += [0.0, 0.0]
    objective = np.concatenate([np.ones(n_v), np.zeros(n_p)])
    lp = LinearProgram(objective, "min", rows, tuple(rels), np.array(rhs),
                       np.zeros(n_cols), np.full(n_cols, np.inf))
    sol = solve_lp(lp, warm=pool.primal_warm, want_warm=True)
    if sol.status != LPStatus.OPTIMAL:
        raise ColumnGenerationStall(f"restricted primal reported {sol.status}")
    pool.primal_warm = sol.warm
    return sol


def solve_individual_fair(graph: KPDGraph, units: Sequence[ExchangeUnit],
                          utility_floor_fraction: float,
                          iteration_limit: int = MASTER_ITERATION_LIMIT,
                          trace: list | None = None) -> RandomizedPolicy:
    """Min selection-rate deviation keeping a fraction of the best utility.

    Stage 1 computes the unconstrained optimum (a deterministic plan attains
    it); stage 2 runs the cut loop with the utility floor, terminating once
    the proposed marginals are implementable at expected utility >= floor or
    a pooled mixture matches the master's deviation bound.
    """
    if not 0.0 <= utility_floor_fraction <= 1.0:
        raise ValueError("utility floor fraction must lie in [0, 1]")
    best = solve_max_utility(units)
    floor = utility_floor_fraction * best.utility
    pool = PlanPool(units, graph.sorted_ids)
    pool.add_active(best.unit_indices)
    cuts = CutPool()

    def master() -> tuple[np.ndarray, np.ndarray, float]:
        return _solve_individual_master(pool, cuts, floor)

    def done(_eta: float, aux: AuxiliaryResult) -> bool:
        # The master minimizes a relaxation of the true deviation objective,
        # so any implementable pi meeting the utility floor is optimal.
        return aux.value >= floor - GAP_REL * (1.0 + abs(floor))

    def primal(eta: float) -> RandomizedPolicy | None:
        # eta is the master's deviation lower bound here.
        sol = _restricted_individual_primal(pool, floor)
        if float(sol.objective) - eta <= GAP_REL * (1.0 + abs(eta)):
            return recover_policy(pool, pool.scatter(sol.x[len(pool.vertex_ids):]))
        return None

    return _master_loop(pool, cuts, master, done, iteration_limit, trace, primal)


def fairness_gaps(policy: RandomizedPolicy, spec: CalibrationFairnessSpec) -> np.ndarray:
    """Signed group0-minus-group1 average selection-rate gap per stratum."""
    pos = {v: i for i, v in enumerate(policy.vertex_ids)}
    gaps = []
    for s in spec.strata:
        r0 = float(np.mean([policy.vertex_marginals[pos[v]] for v in s.group0]))
        r1 = float(np.mean([policy.vertex_marginals[pos[v]] for v in s.group1]))
        gaps.append(r0 - r1)
    return np.array(gaps)


def format_policy_tables(policy: RandomizedPolicy,
                         units: Sequence[ExchangeUnit]) -> str:
    """Deterministic tabular dump: plan distribution then vertex marginals."""
    lines = ["# plans", "plan_id\tprobability\tunit_ids\tmatched_vertices"]
    order = sorted(range(len(policy.support)),
                   key=lambda t: (-policy.probabilities[t], policy.support[t].unit_indices))
    for out_id, t in enumerate(order):
        plan = policy.support[t]
        lines.append("\t".join([
            str(out_id),
            format(float(policy.probabilities[t]), ".12g"),
            ";".join(str(j) for j in plan.unit_indices) or "-",
            ";".join(str(v) for v in sorted(plan.matched)) or "-",
        ]))
    lines.append("# vertex_marginals")
    lines.append("vertex_id\tselection_probability")
    for i, v in enumerate(policy.vertex_ids):
        lines.append(f"{v}\t{format(float(policy.vertex_marginals[i]), '.12g')}")
    lines.append("# expected_utility")
    lines.append(format(policy.expected_utility, ".12g"))
    return "\n".join(lines) + "\n"
