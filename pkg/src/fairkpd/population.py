"""Pool generation: synthetic populations and UNOS-style record ingestion.

Two pool sources:

* a parametric population (protected-group weights, per-group blood-type
  multinomials, sensitization classes with panel-reactive antibody values)
  sampled into incompatible donor-patient pairs by rejection, with
  probabilistic crossmatch edges, and
* tabular donor/patient records carrying HLA typings, paired at random and
  filtered to incompatible combinations, with edges from blood-type plus
  HLA-mismatch rules.

All sampling is driven by a caller-provided seed and documented draw order,
so identical inputs reproduce identical graphs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import BLOOD_TYPES, BloodType, KPDGraph, PairVertex, blood_compatible

log = logging.getLogger(__name__)

REJECTION_CAP = 10**6

HLA_COLUMNS = (
    "d_a1", "d_a2", "d_b1", "d_b2", "d_dr1", "d_dr2",
    "p_a1", "p_a2", "p_b1", "p_b2", "p_dr1", "p_dr2",
)
CSV_COLUMNS = ("donor_abo", "patient_abo") + HLA_COLUMNS + ("pra", "race")


class RejectionCapExceeded(RuntimeError):
    """Sampling failed to produce an incompatible pair within the cap."""


def _check_weights(name: str, weights: Sequence[float]) -> tuple[float, ...]:
    w = tuple(float(x) for x in weights)
    if any(x < 0 for x in w):
        raise ValueError(f"{name} has negative entries")
    if abs(sum(w) - 1.0) > 1e-12:
        raise ValueError(f"{name} must sum to 1, got {sum(w)!r}")
    return w


@dataclass(frozen=True)
class PopulationSpec:
    """Parametric incompatible-pair population.

    group_weights[a] is the share of protected group a (the index doubles as
    the protected-feature value).  blood_weights[a] is the blood-type
    multinomial of group a in O, A, B, AB order, used for both patients and
    donors of that group.  Sensitization class m has population share
    sensitization_weights[m] and panel-reactive antibody value pra_values[m].
    With stratified_counts the pool contains fixed per-(group, class) counts
    (largest-remainder rounding); otherwise each pair draws its group and
    class independently.
    """

    group_weights: tuple[float, ...]
    blood_weights: tuple[tuple[float, float, float, float], ...]
    sensitization_weights: tuple[float, ...]
    pra_values: tuple[float, ...]
    pool_size: int
    stratified_counts: bool = True
    edge_utility: float = 1.0
    vertex_failure_range: tuple[float, float] | None = None
    edge_failure_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "group_weights", _check_weights("group_weights", self.group_weights))
        object.__setattr__(self, "blood_weights",
                           tuple(_check_weights(f"blood_weights[{a}]", bw)
                                 for a, bw in enumerate(self.blood_weights)))
        object.__setattr__(self, "sensitization_weights",
                           _check_weights("sensitization_weights", self.sensitization_weights))
        object.__setattr__(self, "pra_values", tuple(float(r) for r in self.pra_values))
        if len(self.blood_weights) != len(self.group_weights):
            raise ValueError("need one blood multinomial per group")
        if len(self.pra_values) != len(self.sensitization_weights):
            raise ValueError("need one PRA value per sensitization class")
        if any(not 0.0 <= r <= 1.0 for r in self.pra_values):
            raise ValueError("PRA values must lie in [0, 1]")
        if self.pool_size < 0:
            raise ValueError("pool_size must be nonnegative")
        for name in ("vertex_failure_range", "edge_failure_range"):
            rng = getattr(self, name)
            if rng is not None:
                lo, hi = float(rng[0]), float(rng[1])
                if not 0.0 <= lo <= hi <= 1.0:
                    raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1")
                object.__setattr__(self, name, (lo, hi))

    def to_json(self) -> str:
        payload = {
            "group_weights": list(self.group_weights),
            "blood_weights": [list(bw) for bw in self.blood_weights],
            "sensitization_weights": list(self.sensitization_weights),
            "pra_values": list(self.pra_values),
            "pool_size": self.pool_size,
            "stratified_counts": self.stratified_counts,
            "edge_utility": self.edge_utility,
            "vertex_failure_range": list(self.vertex_failure_range)
            if self.vertex_failure_range else None,
            "edge_failure_range": list(self.edge_failure_range)
            if self.edge_failure_range else None,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PopulationSpec":
        raw = json.loads(text)
        return cls(
            group_weights=tuple(raw["group_weights"]),
            blood_weights=tuple(tuple(bw) for bw in raw["blood_weights"]),
            sensitization_weights=tuple(raw["sensitization_weights"]),
            pra_values=tuple(raw["pra_values"]),
            pool_size=int(raw["pool_size"]),
            stratified_counts=bool(raw.get("stratified_counts", True)),
            edge_utility=float(raw.get("edge_utility", 1.0)),
            vertex_failure_range=tuple(raw["vertex_failure_range"])
            if raw.get("vertex_failure_range") else None,
            edge_failure_range=tuple(raw["edge_failure_range"])
            if raw.get("edge_failure_range") else None,
        )


def largest_remainder_counts(weights: Sequence[float], total: int) -> list[int]:
    """Integer apportionment: floors first, then leftovers by fractional part."""
    raw = [w * total for w in weights]
    counts = [math.floor(r) for r in raw]
    short = total - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def _draw_category(rng: np.random.Generator, weights: Sequence[float]) -> int:
    return int(rng.choice(len(weights), p=np.asarray(weights)))


def sample_pool(spec: PopulationSpec, seed: int) -> KPDGraph:
    """Sample an incompatible-pair pool and its crossmatch edge set.

    Draw order (fixed for reproducibility): patient group/class composition,
    then per pair in id order the patient blood type followed by donor
    redraws until incompatibility, then edges in (tail, head) id order with
    one Bernoulli(1 - head patient PRA) draw per blood-compatible ordered
    pair, then optional failure probabilities (vertices in id order, edges in
    sorted order).

    A donor draw is accepted when the pair is incompatible: with probability
    equal to the patient's PRA when blood-compatible, always otherwise.
    """
    rng = np.random.default_rng(seed)
    n_groups = len(spec.group_weights)
    n_classes = len(spec.sensitization_weights)

    memberships: list[tuple[int, int]] = []
    if spec.stratified_counts:
        per_group = largest_remainder_counts(spec.group_weights, spec.pool_size)
        for a in range(n_groups):
            per_class = largest_remainder_counts(spec.sensitization_weights, per_group[a])
            for m in range(n_classes):
                memberships.extend([(a, m)] * per_class[m])
    else:
        for _ in range(spec.pool_size):
            a = _draw_category(rng, spec.group_weights)
            m = _draw_category(rng, spec.sensitization_weights)
            memberships.append((a, m))

    vertices: list[PairVertex] = []
    for vid, (a, m) in enumerate(memberships):
        patient_blood = BLOOD_TYPES[_draw_category(rng, spec.blood_weights[a])]
        pra = spec.pra_values[m]
        for attempt in range(REJECTION_CAP):
            donor_blood = BLOOD_TYPES[_draw_category(rng, spec.blood_weights[a])]
            if blood_compatible(donor_blood, patient_blood):
                if rng.random() < pra:
                    break
            else:
                break
        else:
            raise RejectionCapExceeded(
                f"no incompatible donor for pair {vid} after {REJECTION_CAP} draws"
            )
        vertices.append(PairVertex(
            id=vid, donor_blood=donor_blood, patient_blood=patient_blood,
            pra_level=pra, protected_feature=a, sensitization_class=m + 1,
        ))

    edge_utility: dict[tuple[int, int], float] = {}
    for i, tail in enumerate(vertices):
        for j, head in enumerate(vertices):
            if i == j:
                continue
            if not blood_compatible(tail.donor_blood, head.patient_blood):
                continue
            if rng.random() < 1.0 - head.pra_level:
                edge_utility[(i, j)] = spec.edge_utility

    if spec.vertex_failure_range is not None:
        lo, hi = spec.vertex_failure_range
        vertices = [
            PairVertex(v.id, v.donor_blood, v.patient_blood, v.pra_level,
                       v.protected_feature, v.sensitization_class,
                       float(rng.uniform(lo, hi)))
            for v in vertices
        ]
    edge_failure: dict[tuple[int, int], float] = {}
    if spec.edge_failure_range is not None:
        lo, hi = spec.edge_failure_range
        for e in sorted(edge_utility):
            edge_failure[e] = float(rng.uniform(lo, hi))

    return KPDGraph.build(vertices, edge_utility, edge_failure)


@dataclass(frozen=True)
class UNOSRecord:
    """One donor/patient record: blood types, six HLA alleles each, PRA, race."""

    donor_abo: BloodType
    patient_abo: BloodType
    donor_hla: tuple[str, str, str, str, str, str]
    patient_hla: tuple[str, str, str, str, str, str]
    pra: float
    race: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.pra <= 1.0:
            raise ValueError(f"PRA {self.pra} outside [0, 1]")
        for side in (self.donor_hla, self.patient_hla):
            if len(side) != 6 or any(not str(tok).strip() for tok in side):
                raise ValueError(f"malformed HLA alleles {side!r}")


def hla_mismatch_level(donor_hla: Sequence[str], patient_hla: Sequence[str]) -> int:
    """Mismatch band in 1..4 from per-locus donor-allele mismatch counts.

    Loci are (A, B, DR), two alleles each.  A donor allele mismatches when the
    patient carries it at neither slot of the locus; a homozygous donor locus
    counts at most one mismatch.  Band 1 is zero mismatches everywhere; band 2
    needs DR clean and at most one B mismatch; two B mismatches with DR clean
    or a single DR mismatch give band 3; two DR mismatches give band 4.
    """
    if len(donor_hla) != 6 or len(patient_hla) != 6:
        raise ValueError("expected six alleles per side (A1 A2 B1 B2 DR1 DR2)")
    counts = []
    for locus in range(3):
        d = {str(x).strip() for x in donor_hla[2 * locus: 2 * locus + 2]}
        p = {str(x).strip() for x in patient_hla[2 * locus: 2 * locus + 2]}
        if "" in d or "" in p:
            raise ValueError("empty HLA allele token")
        counts.append(len(d - p))
    m_a, m_b, m_dr = counts
    if m_dr == 2:
        return 4
    if m_dr == 1 or m_b == 2:
        return 3
    if m_a == 0 and m_b == 0:
        return 1
    return 2


def unos_sensitization_class(pra: float) -> int:
    """1 = lowly (<0.1), 2 = moderately (0.1..0.8), 3 = highly (>0.8) sensitized."""
    if pra > 0.8:
        return 3
    if pra >= 0.1:
        return 2
    return 1


def _record_pair_compatible(donor_rec: UNOSRecord, patient_rec: UNOSRecord) -> bool:
    return blood_compatible(donor_rec.donor_abo, patient_rec.patient_abo) and \
        hla_mismatch_level(donor_rec.donor_hla, patient_rec.patient_hla) < 3


def build_unos_graph(records: Sequence[UNOSRecord], pool_size: int, seed: int,
                     edge_utility: float = 1.0) -> KPDGraph:
    """Random incompatible pairs from records, edges by blood + HLA band < 3.

    Each pair samples one record for its donor side and one (independently)
    for its patient side, keeping the combination only when it is
    incompatible (blood-incompatible or HLA band >= 3).  The protected
    feature is 1 for white patients, 0 otherwise.
    """
    if not records:
        raise ValueError("no records supplied")
    rng = np.random.default_rng(seed)
    chosen: list[tuple[UNOSRecord, UNOSRecord]] = []
    rejections = 0
    while len(chosen) < pool_size:
        donor_rec = records[int(rng.integers(len(records)))]
        patient_rec = records[int(rng.integers(len(records)))]
        if _record_pair_compatible(donor_rec, patient_rec):
            rejections += 1
            if rejections >= REJECTION_CAP:
                raise RejectionCapExceeded(
                    f"{REJECTION_CAP} consecutive compatible samples; "
                    "records admit no incompatible pair?"
                )
            continue
        rejections = 0
        chosen.append((donor_rec, patient_rec))

    vertices = [
        PairVertex(
            id=i, donor_blood=d.donor_abo, patient_blood=p.patient_abo,
            pra_level=p.pra,
            protected_feature=1 if p.race.strip().lower() == "white" else 0,
            sensitization_class=unos_sensitization_class(p.pra),
        )
        for i, (d, p) in enumerate(chosen)
    ]
    edges: dict[tuple[int, int], float] = {}
    for i, (donor_rec, _) in enumerate(chosen):
        for j, (_, patient_rec) in enumerate(chosen):
            if i == j:
                continue
            if blood_compatible(donor_rec.donor_abo, patient_rec.patient_abo) and \
                    hla_mismatch_level(donor_rec.donor_hla, patient_rec.patient_hla) < 3:
                edges[(i, j)] = edge_utility
    return KPDGraph.build(vertices, edges)


def read_unos_csv(path: str) -> list[UNOSRecord]:
    """Parse records from a CSV with the fixed column layout."""
    out: list[UNOSRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"CSV missing columns: {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(UNOSRecord(
                    donor_abo=BloodType.parse(row["donor_abo"]),
                    patient_abo=BloodType.parse(row["patient_abo"]),
                    donor_hla=tuple(row[c].strip() for c in HLA_COLUMNS[:6]),
                    patient_hla=tuple(row[c].strip() for c in HLA_COLUMNS[6:]),
                    pra=float(row["pra"]),
                    race=row["race"].strip(),
                ))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    return out


def write_unos_csv(path: str, records: Iterable[UNOSRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([str(r.donor_abo), str(r.patient_abo),
                             *r.donor_hla, *r.patient_hla,
                             format(r.pra, ".6g"), r.race])


_ALLELE_POOLS = {
    "a": (("A1", 0.16), ("A2", 0.28), ("A3", 0.13), ("A11", 0.11),
          ("A24", 0.18), ("A26", 0.14)),
    "b": (("B7", 0.17), ("B8", 0.15), ("B27", 0.09), ("B35", 0.20),
          ("B44", 0.22), ("B51", 0.17)),
    "dr": (("DR1", 0.14), ("DR3", 0.15), ("DR4", 0.20), ("DR7", 0.16),
           ("DR11", 0.18), ("DR15", 0.17)),
}
_RACE_SHARE_WHITE = 0.648
_PRA_CLASS_WEIGHTS = (0.7, 0.2, 0.1)  # low, moderate, high


def synthetic_unos_records(count: int, seed: int) -> list[UNOSRecord]:
    """Generate records with the tabular schema of the registry-style pipeline.

    Stand-in for restricted registry data: race split 64.8% white, blood types
    from the per-race multinomials used elsewhere, PRA drawn uniformly inside
    a class band (70/20/10 low/moderate/high), HLA alleles i.i.d. from small
    per-locus pools (homozygosity arises naturally).
    """
    rng = np.random.default_rng(seed)
    white_blood = (0.45, 0.40, 0.11, 0.04)
    other_blood = (0.51, 0.26, 0.19, 0.04)
    records = []
    for _ in range(count):
        white = rng.random() < _RACE_SHARE_WHITE
        bw = white_blood if white else other_blood
        donor_abo = BLOOD_TYPES[_draw_category(rng, bw)]
        patient_abo = BLOOD_TYPES[_draw_category(rng, bw)]
        cls = _draw_category(rng, _PRA_CLASS_WEIGHTS)
        lo, hi = ((0.0, 0.1), (0.1, 0.8), (0.8, 1.0))[cls]
        pra = float(rng.uniform(lo, hi))
        hla = {}
        for side in ("d", "p"):
            alleles = []
            for locus in ("a", "b", "dr"):
                names = [n for n, _ in _ALLELE_POOLS[locus]]
                weights = [w for _, w in _ALLELE_POOLS[locus]]
                alleles.append(names[_draw_category(rng, weights)])
                alleles.append(names[_draw_category(rng, weights)])
            hla[side] = tuple(alleles)
        records.append(UNOSRecord(
            donor_abo=donor_abo, patient_abo=patient_abo,
            donor_hla=hla["d"], patient_hla=hla["p"],
            pra=pra, race="White" if white else "Other",
        ))
    return records
