"""Self-contained linear programming core.

Bounded-variable revised simplex with a two-phase start.  Dantzig pricing with
a Bland's-rule fallback once degenerate pivots accumulate, explicit basis
inverse with periodic refactorization, and phase-1 duals exposed as Farkas
infeasibility certificates.  Solutions are self-checked against primal
residual and strong-duality tolerances before being returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

#: Absolute primal feasibility tolerance (scaled by 1 + |rhs|).
FEASIBILITY_TOL = 1e-8
#: Relative strong-duality tolerance used by the post-solve check.
OPTIMALITY_TOL = 1e-7
#: Threshold below which a pivot step counts as degenerate.
DEGENERATE_STEP_TOL = 1e-10
#: Consecutive degenerate pivots before switching to Bland's rule.
BLAND_TRIGGER = 1000
BLAND_BURST = 100

_NB_LOWER, _NB_UPPER, _BASIC, _NB_FREE = 0, 1, 2, 3

RELATIONS = ("<=", "=", ">=")


class NumericalFailure(Exception):
    """Raised when the simplex cannot certify its result numerically."""


class LPStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    """min/max objective @ x subject to a_matrix @ x (<=, =, >=) rhs, lower <= x <= upper."""

    objective: np.ndarray
    sense: str
    a_matrix: np.ndarray
    relations: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.objective, dtype=float)
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        b = np.asarray(self.rhs, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if a.size == 0:
            a = a.reshape(len(b), len(c))
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "relations", tuple(self.relations))
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        m, n = a.shape
        if c.shape != (n,) or lo.shape != (n,) or hi.shape != (n,):
            raise ValueError("objective/bounds length does not match matrix columns")
        if b.shape != (m,) or len(self.relations) != m:
            raise ValueError("rhs/relations length does not match matrix rows")
        if any(r not in RELATIONS for r in self.relations):
            raise ValueError(f"relations must be one of {RELATIONS}")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
            raise ValueError("objective, matrix and rhs must be finite")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("bounds must not be NaN")
        if np.any(lo > hi):
            raise ValueError("every lower bound must be <= the matching upper bound")

    @property
    def n_rows(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.a_matrix.shape[1]


@dataclass(frozen=True)
class WarmBasis:
    """Opaque restart token tying a basis to the column layout that made it.

    Valid to replay against an LP with the same rows and relations whose
    first ``n_struct`` columns mean the same thing; extra columns appended
    after them are fine and start nonbasic.  The solver validates the basis
    on arrival and silently cold-starts when it does not check out.
    """

    vstat: np.ndarray
    basis: np.ndarray
    n_struct: int
    n_slack: int


@dataclass(frozen=True)
class LPSolution:
    """Solver outcome.

    ``duals`` are row shadow prices in the problem's own sense (positive on a
    binding <= row of a max problem).  On Infeasible, ``certificate`` holds a
    Farkas row combination y: y_i <= 0 on <= rows, y_i >= 0 on >= rows, and
    y @ rhs exceeds the maximum of y @ (A x) over the variable box (see
    ``verify_farkas``).  On Unbounded it holds an improving feasible ray.
    """

    status: LPStatus
    x: np.ndarray | None
    objective: float
    duals: np.ndarray | None
    certificate: np.ndarray | None
    iterations: int
    warm: WarmBasis | None = None


def dual_objective(lp: LinearProgram, duals: np.ndarray) -> float:
    """Lagrangian bound induced by row multipliers, in the problem's own sense.

    Reduced costs within a scale-relative epsilon of zero are dropped: an
    optimal basis routinely leaves ~1e-15 residue on columns whose relevant
    bound is infinite, and taking those terms literally would turn an exact
    bound into +-inf.
    """
    y = np.asarray(duals, dtype=float)
    reduced = lp.objective - lp.a_matrix.T @ y
    scale = 1.0 + float(np.max(np.abs(lp.objective))) if lp.n_cols else 1.0
    if lp.n_rows:
        scale = max(scale, float(np.max(np.abs(lp.a_matrix))) * (1.0 + float(np.max(np.abs(y)))))
    cutoff = 1e-9 * scale
    total = float(y @ lp.rhs)
    for j in range(lp.n_cols):
        r = reduced[j]
        if abs(r) <= cutoff:
            continue
        if lp.sense == "max":
            pick = lp.upper[j] if r > 0 else lp.lower[j]
        else:
            pick = lp.lower[j] if r > 0 else lp.upper[j]
        if not np.isfinite(pick):
            return math.inf if lp.sense == "max" else -math.inf
        total += r * pick
    return total


def verify_farkas(lp: LinearProgram, y: np.ndarray, tol: float = FEASIBILITY_TOL) -> float:
    """Margin of a Farkas certificate; positive (beyond tol) proves infeasibility.

    Checks the row-sign conditions, then returns
    ``y @ rhs - max_{lower <= x <= upper} (y @ A) x``.
    """
    y = np.asarray(y, dtype=float)
    scale = 1.0 + float(np.max(np.abs(y))) if y.size else 1.0
    for i, rel in enumerate(lp.relations):
        if rel == "<=" and y[i] > tol * scale:
            return -math.inf
        if rel == ">=" and y[i] < -tol * scale:
            return -math.inf
    g = lp.a_matrix.T @ y
    # Scale-relative cutoff: ~1e-15 residue against an infinite bound is noise,
    # not an unbounded reach direction.
    coeff_scale = float(np.max(np.abs(lp.a_matrix))) if lp.a_matrix.size else 0.0
    cutoff = tol * (1.0 + coeff_scale) * scale
    reach = 0.0
    for j in range(lp.n_cols):
        if abs(g[j]) <= cutoff:
            continue
        if g[j] > 0:
            if not np.isfinite(lp.upper[j]):
                return -math.inf
            reach += g[j] * lp.upper[j]
        else:
            if not np.isfinite(lp.lower[j]):
                return -math.inf
            reach += g[j] * lp.lower[j]
    return float(y @ lp.rhs - reach)


def verify_ray(lp: LinearProgram, ray: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
    """True when the ray is a recession direction that improves the objective."""
    d = np.asarray(ray, dtype=float)
    scale = 1.0 + float(np.max(np.abs(d)))
    ad = lp.a_matrix @ d
    for i, rel in enumerate(lp.relations):
        if rel == "<=" and ad[i] > tol * scale:
            return False
        if rel == ">=" and ad[i] < -tol * scale:
            return False
        if rel == "=" and abs(ad[i]) > tol * scale:
            return False
    for j in range(lp.n_cols):
        if d[j] > tol and not np.isfinite(lp.upper[j]):
            continue
        if d[j] < -tol and not np.isfinite(lp.lower[j]):
            continue
        if abs(d[j]) > tol:
            return False
    gain = float(lp.objective @ d)
    return gain > tol if lp.sense == "max" else gain < -tol


class _BoundedSimplex:
    """Revised simplex over min c@x s.t. A@x = b (after slacks), lo <= x <= hi."""

    def __init__(self, lp: LinearProgram, max_iterations: int, bland_from_start: bool,
                 refactor_every: int, warm: WarmBasis | None = None) -> None:
        self.lp = lp
        m, n = lp.a_matrix.shape
        self.m = m
        self.n_struct = n
        slack_rows = [i for i, rel in enumerate(lp.relations) if rel != "="]
        self.n_slack = len(slack_rows)
        n_work = n + self.n_slack + m  # structurals, slacks, artificials
        self.n_work = n_work
        self.art_start = n + self.n_slack

        a = np.zeros((m, n_work))
        a[:, :n] = lp.a_matrix
        lo = np.full(n_work, 0.0)
        hi = np.full(n_work, math.inf)
        lo[:n] = lp.lower
        hi[:n] = lp.upper
        for pos, row in enumerate(slack_rows):
            a[row, n + pos] = 1.0
            if lp.relations[row] == "<=":
                lo[n + pos], hi[n + pos] = 0.0, math.inf
            else:  # ">=": slack = b - a@x <= 0
                lo[n + pos], hi[n + pos] = -math.inf, 0.0

        self.a = a
        self.b = lp.rhs.astype(float)
        self.lo = lo
        self.hi = hi
        self.c_struct = np.zeros(n_work)
        self.c_struct[:n] = lp.objective if lp.sense == "min" else -lp.objective

        self.max_iterations = max_iterations
        self.refactor_every = refactor_every
        self.bland = bland_from_start
        self.bland_start = bland_from_start
        self.iterations = 0
        self.degenerate_run = 0
        self.bland_iters = 0
        self.bland_budget = BLAND_BURST

        # Initial point: every non-artificial column rests at a finite bound, or 0 if free.
        self.xval = np.zeros(n_work)
        self.vstat = np.full(n_work, _NB_LOWER, dtype=np.int8)
        for j in range(self.art_start):
            if np.isfinite(lo[j]):
                self.xval[j] = lo[j]
                self.vstat[j] = _NB_LOWER
            elif np.isfinite(hi[j]):
                self.xval[j] = hi[j]
                self.vstat[j] = _NB_UPPER
            else:
                self.xval[j] = 0.0
                self.vstat[j] = _NB_FREE

        residual = self.b - a[:, : self.art_start] @ self.xval[: self.art_start]
        self.art_sign = np.where(residual >= 0.0, 1.0, -1.0)
        for i in range(m):
            a[i, self.art_start + i] = self.art_sign[i]
        self.xval[self.art_start :] = np.abs(residual)
        self.vstat[self.art_start :] = _BASIC
        self.basis = np.arange(self.art_start, n_work)
        self.binv = np.diag(self.art_sign)

        self.enterable = np.ones(n_work, dtype=bool)
        self.enterable[self.art_start :] = False
        self.enterable[np.asarray(lo == hi)] = False

        self.scale_b = 1.0 + float(np.max(np.abs(self.b))) if m else 1.0

        if warm is not None:
            self._try_warm(warm)

    def _try_warm(self, warm: WarmBasis) -> None:
        """Overlay a prior basis when it is still primal feasible here.

        Columns of the old layout keep their meaning, appended structural
        columns start at their bound, and old slack/artificial indices shift
        by the number of appended columns.  Any mismatch, singular basis or
        bound violation leaves the cold start untouched.
        """
        if (len(warm.basis) != self.m or warm.n_slack != self.n_slack
                or warm.n_struct > self.n_struct):
            return
        old_nb = warm.n_struct + warm.n_slack
        shift = self.n_struct - warm.n_struct
        if len(warm.vstat) != old_nb + self.m:
            return
        old_cols = np.arange(old_nb + self.m)
        new_cols = np.where(old_cols < old_nb, old_cols, old_cols + shift)

        vstat = self.vstat.copy()
        vstat[self.art_start :] = _NB_LOWER
        vstat[new_cols] = warm.vstat
        basis = new_cols[warm.basis]
        if len(np.unique(basis)) != self.m:
            return
        vstat[basis] = _BASIC

        xval = np.zeros(self.n_work)
        nonbasic = np.ones(self.n_work, dtype=bool)
        nonbasic[basis] = False
        for j in np.nonzero(nonbasic)[0]:
            if vstat[j] == _NB_UPPER and np.isfinite(self.hi[j]):
                xval[j] = self.hi[j]
            elif vstat[j] == _NB_FREE or not np.isfinite(self.lo[j]):
                xval[j] = 0.0
            else:
                xval[j] = self.lo[j]
        try:
            binv = np.linalg.inv(self.a[:, basis])
        except np.linalg.LinAlgError:
            return
        xb = binv @ (self.b - self.a[:, nonbasic] @ xval[nonbasic])
        tol = FEASIBILITY_TOL * self.scale_b
        if np.any(xb < self.lo[basis] - tol) or np.any(xb > self.hi[basis] + tol):
            return
        art_rows = basis >= self.art_start
        if np.any(np.abs(xb[art_rows]) > tol):
            return
        xval[basis] = xb
        self.vstat = vstat
        self.basis = basis
        self.binv = binv
        self.xval = xval
        # Artificials stay pinned; a leftover basic one sits at (numerical) zero.
        self.hi[self.art_start :] = 0.0
        self.xval[self.art_start :][self.vstat[self.art_start :] != _BASIC] = 0.0

    # -- basis maintenance -------------------------------------------------

    def _refactor(self) -> None:
        base = self.a[:, self.basis]
        try:
            self.binv = np.linalg.inv(base)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("basis matrix became singular") from exc
        nonbasic = np.ones(self.n_work, dtype=bool)
        nonbasic[self.basis] = False
        rhs = self.b - self.a[:, nonbasic] @ self.xval[nonbasic]
        self.xval[self.basis] = self.binv @ rhs

    def _update_binv(self, d: np.ndarray, row: int) -> None:
        piv = d[row]
        new_row = self.binv[row] / piv
        factor = d.copy()
        factor[row] = 0.0
        self.binv -= np.outer(factor, new_row)
        self.binv[row] = new_row

    # -- core iteration ----------------------------------------------------

    def _run(self, cost: np.ndarray, allow_unbounded: bool):
        """Iterate to optimality for the given costs.

        Returns None on optimality, or (entering, direction, d) when the
        problem is unbounded in that direction and allow_unbounded is set.
        Entering choice uses devex reference weights, which approximate
        steepest-edge norms and avoid the stalling a raw most-negative rule
        suffers on degenerate bases; Bland's rule remains the last-resort
        anti-cycling fallback.
        """
        opt_tol = 1e-9 * max(1.0, float(np.max(np.abs(cost))) if cost.size else 1.0)
        piv_tol = 1e-9
        since_refactor = 0
        devex_w = np.ones(self.n_work)
        while True:
            self.iterations += 1
            if self.iterations > self.max_iterations:
                raise NumericalFailure(
                    f"simplex iteration limit {self.max_iterations} exceeded"
                )
            if since_refactor >= self.refactor_every:
                self._refactor()
                since_refactor = 0

            y = cost[self.basis] @ self.binv
            reduced = cost - y @ self.a
            viol = np.zeros(self.n_work)
            at_lo = (self.vstat == _NB_LOWER) & self.enterable
            at_hi = (self.vstat == _NB_UPPER) & self.enterable
            at_free = (self.vstat == _NB_FREE) & self.enterable
            viol[at_lo] = -reduced[at_lo]
            viol[at_hi] = reduced[at_hi]
            viol[at_free] = np.abs(reduced[at_free])
            if not np.any(viol > opt_tol):
                return None

            if self.bland:
                entering = int(np.nonzero(viol > opt_tol)[0][0])
            else:
                score = np.where(viol > opt_tol, viol * viol / devex_w, 0.0)
                entering = int(np.argmax(score))
            if self.vstat[entering] == _NB_LOWER:
                direction = 1.0
            elif self.vstat[entering] == _NB_UPPER:
                direction = -1.0
            else:
                direction = 1.0 if reduced[entering] < 0 else -1.0

            d = self.binv @ self.a[:, entering]
            td = direction * d
            x_basis = self.xval[self.basis]
            ratios = np.full(self.m, math.inf)
            dec = td > piv_tol
            if np.any(dec):
                ratios[dec] = (x_basis[dec] - self.lo[self.basis[dec]]) / td[dec]
            inc = td < -piv_tol
            if np.any(inc):
                ratios[inc] = (self.hi[self.basis[inc]] - x_basis[inc]) / (-td[inc])
            np.maximum(ratios, 0.0, out=ratios)

            own_range = self.hi[entering] - self.lo[entering]
            basic_limit = float(np.min(ratios)) if self.m else math.inf
            step = min(own_range, basic_limit)
            if not np.isfinite(step):
                if allow_unbounded:
                    return entering, direction, d
                raise NumericalFailure("unbounded phase-1 subproblem")

            if step <= DEGENERATE_STEP_TOL:
                self.degenerate_run += 1
                if self.bland and not self.bland_start:
                    # Bland bursts are bounded: its first-index crawl can be
                    # orders of magnitude slower than devex on wide problems,
                    # so hand back after a budget and double the next burst.
                    # Strict-progress steps are finite in number, so budgets
                    # eventually grow past Bland's own finite completion time
                    # and termination is preserved.
                    self.bland_iters += 1
                    if self.bland_iters > self.bland_budget:
                        self.bland = False
                        self.bland_budget *= 2
                        self.degenerate_run = 0
                elif self.degenerate_run > BLAND_TRIGGER:
                    self.bland = True
                    self.bland_iters = 0
            else:
                # Strict progress: no earlier basis can recur, so Bland's
                # slow-but-safe rule may hand back to steepest violation.
                self.degenerate_run = 0
                self.bland = self.bland_start
                self.bland_budget = BLAND_BURST

            if own_range <= basic_limit:
                # Bound flip: entering variable crosses to its other bound.
                self.xval[self.basis] = x_basis - td * step
                if self.vstat[entering] == _NB_LOWER:
                    self.xval[entering] = self.hi[entering]
                    self.vstat[entering] = _NB_UPPER
                else:
                    self.xval[entering] = self.lo[entering]
                    self.vstat[entering] = _NB_LOWER
                since_refactor += 1
                continue

            tied = np.nonzero(ratios <= step + 1e-12)[0]
            if self.bland:
                row = int(tied[np.argmin(self.basis[tied])])
            else:
                row = int(tied[np.argmax(np.abs(td[tied]))])
            leaving = int(self.basis[row])

            # Devex update (Forrest-Goldfarb): rescale against the pivot row.
            alpha = self.binv[row] @ self.a
            w_q = devex_w[entering]
            np.maximum(devex_w, (alpha / d[row]) ** 2 * w_q, out=devex_w)
            devex_w[leaving] = max(w_q / (d[row] * d[row]), 1.0)
            if float(devex_w.max()) > 1e8:
                devex_w[:] = 1.0

            self.xval[entering] = self.xval[entering] + direction * step
            self.xval[self.basis] = x_basis - td * step
            self.xval[leaving] = self.lo[leaving] if td[row] > 0 else self.hi[leaving]
            self.vstat[leaving] = _NB_LOWER if td[row] > 0 else _NB_UPPER
            self.vstat[entering] = _BASIC
            self.basis[row] = entering
            self._update_binv(d, row)
            since_refactor += 1

    # -- phases ------------------------------------------------------------

    def solve(self):
        phase1_cost = np.zeros(self.n_work)
        phase1_cost[self.art_start :] = 1.0
        if float(np.sum(self.xval[self.art_start :])) > 0.0:
            self._run(phase1_cost, allow_unbounded=False)
            infeas = float(phase1_cost @ self.xval)
            if infeas > FEASIBILITY_TOL * self.scale_b:
                y = phase1_cost[self.basis] @ self.binv
                return LPStatus.INFEASIBLE, y
            self._evict_artificials()
        else:
            self._evict_artificials()

        outcome = self._run(self.c_struct, allow_unbounded=True)
        if outcome is not None:
            entering, direction, d = outcome
            ray = np.zeros(self.n_work)
            ray[entering] = direction
            ray[self.basis] -= direction * d
            return LPStatus.UNBOUNDED, ray[: self.n_struct]
        return LPStatus.OPTIMAL, None

    def _evict_artificials(self) -> None:
        piv_tol = 1e-7
        for row in range(self.m):
            var = self.basis[row]
            if var < self.art_start:
                continue
            # Basic artificial at (near) zero: pivot in any usable column.
            candidates = np.nonzero(self.enterable & (self.vstat != _BASIC))[0]
            if candidates.size:
                weights = self.binv[row] @ self.a[:, candidates]
                usable = np.nonzero(np.abs(weights) > piv_tol)[0]
            else:
                usable = np.array([], dtype=int)
            if usable.size:
                entering = int(candidates[usable[0]])
                d = self.binv @ self.a[:, entering]
                self.vstat[var] = _NB_LOWER
                self.xval[var] = 0.0
                self.vstat[entering] = _BASIC
                self.basis[row] = entering
                self._update_binv(d, row)
            else:
                # Redundant row: pin the artificial at zero.
                self.hi[var] = 0.0
                self.xval[var] = 0.0

    # -- reporting ---------------------------------------------------------

    def solution_parts(self):
        x = self.xval[: self.n_struct].copy()
        y = self.c_struct[self.basis] @ self.binv
        return x, y

    def export_warm(self) -> WarmBasis:
        return WarmBasis(self.vstat.copy(), self.basis.copy(),
                         self.n_struct, self.n_slack)


def solve_lp(
    lp: LinearProgram,
    *,
    max_iterations: int = 100000,
    warm: WarmBasis | None = None,
    want_warm: bool = False,
    _retry: bool = True,
) -> LPSolution:
    """Solve an LP, self-checking residuals and duality before returning.

    ``warm`` replays a basis from a related earlier solve (see WarmBasis);
    ``want_warm`` asks for such a token on the returned optimal solution.
    """
    simplex = _BoundedSimplex(lp, max_iterations, bland_from_start=not _retry,
                              refactor_every=64 if _retry else 16, warm=warm)
    status, payload = simplex.solve()

    if status is LPStatus.INFEASIBLE:
        margin = verify_farkas(lp, payload)
        if margin <= FEASIBILITY_TOL * simplex.scale_b:
            if _retry:
                return solve_lp(lp, max_iterations=max_iterations,
                                want_warm=want_warm, _retry=False)
            raise NumericalFailure("could not certify infeasibility")
        return LPSolution(
            status=status, x=None, objective=math.nan, duals=None,
            certificate=payload, iterations=simplex.iterations,
        )

    if status is LPStatus.UNBOUNDED:
        # The internal form minimizes a (possibly negated) cost, so the same
        # ray improves the problem in its original sense.
        ray = payload
        if not verify_ray(lp, ray):
            if _retry:
                return solve_lp(lp, max_iterations=max_iterations,
                                want_warm=want_warm, _retry=False)
            raise NumericalFailure("could not certify unboundedness")
        return LPSolution(
            status=status,
            x=simplex.xval[: simplex.n_struct].copy(),
            objective=math.inf if lp.sense == "max" else -math.inf,
            duals=None,
            certificate=ray,
            iterations=simplex.iterations,
        )

    x, y_internal = simplex.solution_parts()
    duals = -y_internal if lp.sense == "max" else y_internal
    objective = float(lp.objective @ x)

    ok = _check_primal(lp, x)
    if ok:
        bound = dual_objective(lp, duals)
        gap = abs(bound - objective)
        ok = gap <= OPTIMALITY_TOL * (1.0 + abs(objective))
    if not ok:
        if _retry:
            return solve_lp(lp, max_iterations=max_iterations,
                            want_warm=want_warm, _retry=False)
        raise NumericalFailure("optimal basis failed the self-check")
    return LPSolution(
        status=LPStatus.OPTIMAL, x=x, objective=objective,
        duals=duals, certificate=None, iterations=simplex.iterations,
        warm=simplex.export_warm() if want_warm else None,
    )


def _check_primal(lp: LinearProgram, x: np.ndarray) -> bool:
    tol_rows = FEASIBILITY_TOL * (1.0 + float(np.max(np.abs(lp.rhs))) if lp.n_rows else 1.0)
    ax = lp.a_matrix @ x
    for i, rel in enumerate(lp.relations):
        if rel == "<=" and ax[i] > lp.rhs[i] + tol_rows:
            return False
        if rel == ">=" and ax[i] < lp.rhs[i] - tol_rows:
            return False
        if rel == "=" and abs(ax[i] - lp.rhs[i]) > tol_rows:
            return False
    span = np.where(np.isfinite(lp.upper - lp.lower), np.abs(lp.upper - lp.lower), 1.0)
    tol_bounds = FEASIBILITY_TOL * (1.0 + np.maximum(span, 1.0))
    if np.any(x < lp.lower - tol_bounds) or np.any(x > lp.upper + tol_bounds):
        return False
    return True
