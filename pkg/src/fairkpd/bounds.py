"""Closed-form upper bounds on the utility cost of balancing selection rates.

Both bounds describe large pools drawn i.i.d. from a pair-type population
(donor blood, patient blood, sensitization level, protected group).  The
general bound needs only the joint type distribution and holds for any
bounded utility; the transplant-count bound is sharper but requires the
factored population model and a realistic blood-type mix.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MASS_TOL = 1e-12

# Blood-type axis order used by every array in this module.
_O, _A, _B, _AB = range(4)
BLOOD_AXIS = ("O", "A", "B", "AB")


class DegenerateDistribution(ValueError):
    """A sensitization level carries mass in only one protected group."""


class BoundPreconditionError(ValueError):
    """Inputs violate the assumptions the transplant-count bound relies on."""


@dataclass(frozen=True)
class TypeDistribution:
    """Joint pair-type mass over (donor blood, patient blood, level, group).

    ``mass[i, j, k, a]`` is the probability that a freshly sampled incompatible
    pair has donor blood ``BLOOD_AXIS[i]``, patient blood ``BLOOD_AXIS[j]``,
    sensitization level ``sensitization_levels[k]`` and protected group ``a``.
    """

    mass: np.ndarray
    sensitization_levels: tuple[float, ...]

    def __post_init__(self) -> None:
        arr = np.array(self.mass, dtype=float)
        levels = tuple(float(r) for r in self.sensitization_levels)
        if arr.shape != (4, 4, len(levels), 2):
            raise ValueError(f"mass must have shape (4, 4, {len(levels)}, 2), got {arr.shape}")
        if arr.size == 0:
            raise ValueError("at least one sensitization level is required")
        if float(arr.min()) < 0.0:
            raise ValueError("mass entries must be nonnegative")
        total = float(arr.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"mass must sum to 1 within {MASS_TOL}, got {total!r}")
        object.__setattr__(self, "mass", arr)
        object.__setattr__(self, "sensitization_levels", levels)

    def group_mass_by_level(self) -> np.ndarray:
        """Total mass of each (level, group) slice, shape (levels, 2)."""
        return self.mass.sum(axis=(0, 1))


@dataclass(frozen=True)
class FactoredTypeDistribution:
    """Pair-type model factoring as group share x donor blood x patient blood.

    ``blood_by_group[a]`` holds the blood-type frequencies of group ``a`` in
    ``BLOOD_AXIS`` order.  Donor and patient of a pair share the group, and the
    level mix is the same in both groups, so the joint mass of a type cell is
    ``c * level * share * blood[donor] * blood[patient]`` with ``c`` fixed by
    normalization.  ``mean_pra`` is the population-average probability of a
    positive crossmatch; the transplant-count bound treats it as a free knob,
    so scans vary it while everything else stays put.
    """

    group_shares: tuple[float, float]
    blood_by_group: tuple[Sequence[float], Sequence[float]]
    sensitization_levels: tuple[float, ...]
    mean_pra: float

    def __post_init__(self) -> None:
        shares = tuple(float(s) for s in self.group_shares)
        if len(shares) != 2 or min(shares) <= 0.0 or abs(sum(shares) - 1.0) > MASS_TOL:
            raise ValueError(f"group shares must be positive and sum to 1, got {shares}")
        bloods = []
        for a, row in enumerate(self.blood_by_group):
            freq = tuple(float(b) for b in row)
            if len(freq) != 4 or min(freq) < 0.0 or abs(sum(freq) - 1.0) > MASS_TOL:
                raise ValueError(f"blood frequencies of group {a} must be a distribution, got {freq}")
            bloods.append(freq)
        levels = tuple(float(r) for r in self.sensitization_levels)
        if not levels or any(not 0.0 < r <= 1.0 for r in levels):
            raise ValueError("sensitization levels must lie in (0, 1]")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("sensitization levels must be strictly increasing")
        if not 0.0 <= float(self.mean_pra) <= 1.0:
            raise ValueError(f"mean_pra must lie in [0, 1], got {self.mean_pra!r}")
        object.__setattr__(self, "group_shares", shares)
        object.__setattr__(self, "blood_by_group", (bloods[0], bloods[1]))
        object.__setattr__(self, "sensitization_levels", levels)
        object.__setattr__(self, "mean_pra", float(self.mean_pra))

    def population_blood_frequencies(self) -> tuple[float, float, float, float]:
        """Blood-type mix of the whole population in BLOOD_AXIS order."""
        o, a, b, ab = (
            sum(share * self.blood_by_group[g][i] for g, share in enumerate(self.group_shares))
            for i in range(4)
        )
        return (o, a, b, ab)

    def to_joint(self) -> TypeDistribution:
        levels = np.array(self.sensitization_levels)
        scale = 1.0 / float(levels.sum())
        mass = np.zeros((4, 4, len(levels), 2))
        for a, share in enumerate(self.group_shares):
            blood = np.array(self.blood_by_group[a])
            mass[:, :, :, a] = scale * share * np.einsum("i,j,k->ijk", blood, blood, levels)
        return TypeDistribution(mass=mass, sensitization_levels=self.sensitization_levels)


def pof_bound_general(dist: TypeDistribution | FactoredTypeDistribution) -> float:
    """Worst-case relative utility loss of rate balancing, any bounded utility.

    Scans every (donor blood, patient blood, level) cell and takes the larger
    of the two one-sided imbalance ratios between the groups; cells with no
    mass are skipped because both ratios have a zero denominator there.
    """
    if isinstance(dist, FactoredTypeDistribution):
        dist = dist.to_joint()
    mass = dist.mass
    level_group = dist.group_mass_by_level()
    best = 0.0
    for k, level in enumerate(dist.sensitization_levels):
        bar0, bar1 = float(level_group[k, 0]), float(level_group[k, 1])
        if bar0 + bar1 == 0.0:
            continue
        if bar0 == 0.0 or bar1 == 0.0:
            raise DegenerateDistribution(
                f"level {level:g} has mass only in group {int(bar0 == 0.0)}"
            )
        for i in range(4):
            for j in range(4):
                m0, m1 = float(mass[i, j, k, 0]), float(mass[i, j, k, 1])
                if m0 + m1 == 0.0:
                    continue
                best = max(
                    best,
                    (m1 * bar0 - m0 * bar1) / ((m1 + m0) * bar0),
                    (m0 * bar1 - m1 * bar0) / ((m1 + m0) * bar1),
                )
    return best


def _blocked_pair_mass(dist: FactoredTypeDistribution) -> np.ndarray:
    """phi[b1, b2]: mass of (b1 donor, b2 patient) pairs present only because
    the crossmatch failed, pooled over both groups."""
    out = np.zeros((4, 4))
    for a, share in enumerate(dist.group_shares):
        blood = np.array(dist.blood_by_group[a])
        out += share * dist.mean_pra * np.outer(blood, blood)
    return out


def _always_matched_share(share: float, blood: Sequence[float], level: float) -> float:
    """Mass of a group's pairs the unconstrained optimum always matches."""
    o, a, b, ab = blood
    return share * level * (o + ab - o * ab + a * a + b * b) + 2.0 * share * a * b


def _eligible_share(share: float, blood: Sequence[float], level: float) -> float:
    """Mass of a group's pairs whose blood types can enter some exchange."""
    o, a, b, ab = blood
    extra = share * (o * (1.0 - o) + a * ab + b * ab)
    return _always_matched_share(share, blood, level) + extra


def _transferable_share(share: float, blood: Sequence[float], phi: np.ndarray) -> float:
    """Match mass in the partially used blood classes that can be steered
    toward one group without changing the blood-type structure.

    Each class contributes the smaller of the cross-group mass available and
    the group's remaining supply in that class, floored at zero: once the
    crossmatch-blocked mass exhausts a small group's supply there is nothing
    left to steer, not a negative amount.
    """
    o, a, b, ab = blood
    total = max(0.0, min(phi[_B, _AB], 2.0 * share * b * ab - phi[_B, _AB]))
    total += max(0.0, min(phi[_O, _AB] + phi[_A, _AB],
                          2.0 * share * a * ab - phi[_O, _AB] - phi[_A, _AB]))
    total += max(0.0, min(phi[_A, _O] + phi[_AB, _O],
                          2.0 * share * o * a - phi[_A, _O] - phi[_AB, _O]))
    total += max(0.0, min(phi[_O, _B], 2.0 * share * o * b - phi[_O, _B]))
    return float(total)


def check_transplant_bound_preconditions(dist: FactoredTypeDistribution) -> None:
    """Raise BoundPreconditionError naming every violated assumption."""
    o, a, b, ab = dist.population_blood_frequencies()
    failed = []
    if not 1.5 * a > o:
        failed.append(f"1.5*A > O (A={a:.6g}, O={o:.6g})")
    if not o > a:
        failed.append(f"O > A (O={o:.6g}, A={a:.6g})")
    if not a > b:
        failed.append(f"A > B (A={a:.6g}, B={b:.6g})")
    if not b > ab:
        failed.append(f"B > AB (B={b:.6g}, AB={ab:.6g})")
    if not dist.mean_pra < 0.4:
        failed.append(f"mean PRA < 0.4 (got {dist.mean_pra:.6g})")
    if failed:
        raise BoundPreconditionError("; ".join(failed))


def pof_bound_transplants(dist: FactoredTypeDistribution) -> float:
    """Worst-case relative loss in transplant count from rate balancing.

    Valid only when the population blood mix satisfies the realistic ordering
    1.5*A > O > A > B > AB and the average crossmatch-failure rate is below
    0.4; anything else raises BoundPreconditionError.
    """
    check_transplant_bound_preconditions(dist)
    phi = _blocked_pair_mass(dist)
    shares = dist.group_shares
    bloods = dist.blood_by_group
    shift = [_transferable_share(shares[a], bloods[a], phi) for a in (0, 1)]
    cross = (
        phi[_B, _AB] + phi[_O, _AB] + phi[_A, _AB]
        + phi[_A, _O] + phi[_AB, _O] + phi[_O, _B]
    )
    best = 0.0
    for level in dist.sensitization_levels:
        t = [_always_matched_share(shares[a], bloods[a], level) for a in (0, 1)]
        s = [_eligible_share(shares[a], bloods[a], level) for a in (0, 1)]
        q = t[1] + t[0] + cross
        best = max(
            best,
            (s[1] * t[0] - s[0] * t[1] - s[0] * shift[1]) / (s[1] * q),
            (s[0] * t[1] - s[1] * t[0] - s[1] * shift[0]) / (s[0] * q),
        )
    return best


def default_mean_pra_grid(low: float = 0.051, high: float = 0.399) -> tuple[float, ...]:
    """Millimeter grid over the admissible crossmatch-rate interval.

    Endpoints are rounded to integer thousandths first so the grid itself
    carries no float accumulation error.
    """
    lo, hi = round(low * 1000.0), round(high * 1000.0)
    if lo > hi:
        raise ValueError(f"empty grid: [{low}, {high}]")
    return tuple(m / 1000.0 for m in range(lo, hi + 1))


def scan_mean_pra(
    dist: FactoredTypeDistribution, mean_pra_values: Iterable[float]
) -> list[tuple[float, float]]:
    """Evaluate the transplant-count bound along a grid of crossmatch rates."""
    rows = []
    for value in mean_pra_values:
        probe = dataclasses.replace(dist, mean_pra=float(value))
        rows.append((float(value), pof_bound_transplants(probe)))
    return rows


def format_bound_table(rows: Sequence[tuple[float, float]]) -> str:
    """Render (mean_pra, bound) rows as a plot-ready TSV table."""
    lines = ["mean_pra\tbound"]
    for value, bound in rows:
        lines.append(f"{value:.3f}\t{bound:.12g}")
    return "\n".join(lines) + "\n"
