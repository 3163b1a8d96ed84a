"""Domain types for paired-donation pools: pairs, compatibility graphs, cycles,
and the vertex subsets over which failure recourse is evaluated."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

Edge = tuple[int, int]


class BloodType(Enum):
    """ABO blood group of a donor or a patient."""

    O = "O"
    A = "A"
    B = "B"
    AB = "AB"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, token: str) -> "BloodType":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown blood type {token!r}") from None


#: Deterministic ordering used for sampling and table output.
BLOOD_TYPES = (BloodType.O, BloodType.A, BloodType.B, BloodType.AB)


def blood_compatible(donor: BloodType, patient: BloodType) -> bool:
    """ABO rule: O donates to anyone, AB receives from anyone, same type otherwise."""
    return donor is BloodType.O or patient is BloodType.AB or donor is patient


@dataclass(frozen=True)
class PairVertex:
    """One incompatible donor-patient pair.

    ``pra_level`` is the patient panel-reactive antibody score in [0, 1].
    ``protected_feature`` is an integer group label (binary in the shipped
    experiments), ``sensitization_class`` a 1-based PRA class index, and
    ``vertex_failure_prob`` the probability the pair drops out before its
    planned exchange is performed.
    """

    id: int
    donor_blood: BloodType
    patient_blood: BloodType
    pra_level: float
    protected_feature: int = 0
    sensitization_class: int = 1
    vertex_failure_prob: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.pra_level <= 1.0:
            raise ValueError(f"pair {self.id}: PRA {self.pra_level} outside [0, 1]")
        if not 0.0 <= self.vertex_failure_prob <= 1.0:
            raise ValueError(
                f"pair {self.id}: failure probability {self.vertex_failure_prob} outside [0, 1]"
            )
        if self.sensitization_class < 1:
            raise ValueError(f"pair {self.id}: sensitization class must be >= 1")


@dataclass(frozen=True, eq=False)
class KPDGraph:
    """Directed compatibility graph over incompatible pairs.

    An edge (i, j) means the donor of pair i is compatible with the patient of
    pair j.  Utilities and failure probabilities are keyed by edge; every edge
    has an entry in both maps.
    """

    vertices: tuple[PairVertex, ...]
    edge_utility: dict[Edge, float]
    edge_failure_prob: dict[Edge, float]

    @classmethod
    def build(
        cls,
        vertices: Iterable[PairVertex],
        edge_utility: Mapping[Edge, float],
        edge_failure_prob: Mapping[Edge, float] | None = None,
    ) -> "KPDGraph":
        vertices = tuple(vertices)
        ids = [v.id for v in vertices]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate vertex ids in pool")
        known = set(ids)
        utilities: dict[Edge, float] = {}
        failures: dict[Edge, float] = {}
        for edge in sorted(edge_utility):
            i, j = edge
            if i == j:
                raise ValueError(f"self-loop edge {edge}")
            if i not in known or j not in known:
                raise ValueError(f"edge {edge} references unknown vertex")
            u = float(edge_utility[edge])
            if not np.isfinite(u) or u < 0.0:
                raise ValueError(f"edge {edge}: utility {u} must be finite and >= 0")
            p = float(edge_failure_prob.get(edge, 0.0)) if edge_failure_prob else 0.0
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"edge {edge}: failure probability {p} outside [0, 1]")
            utilities[edge] = u
            failures[edge] = p
        if edge_failure_prob:
            extra = set(edge_failure_prob) - set(utilities)
            if extra:
                raise ValueError(f"failure probabilities for unknown edges {sorted(extra)}")
        return cls(vertices=vertices, edge_utility=utilities, edge_failure_prob=failures)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def ids(self) -> tuple[int, ...]:
        return tuple(v.id for v in self.vertices)

    @cached_property
    def sorted_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.ids))

    @cached_property
    def vertex_by_id(self) -> dict[int, PairVertex]:
        return {v.id: v for v in self.vertices}

    @cached_property
    def edges(self) -> frozenset[Edge]:
        return frozenset(self.edge_utility)

    @cached_property
    def successors(self) -> dict[int, tuple[int, ...]]:
        succ: dict[int, list[int]] = {v.id: [] for v in self.vertices}
        for i, j in sorted(self.edge_utility):
            succ[i].append(j)
        return {i: tuple(js) for i, js in succ.items()}

    def adjacency_arrays(self) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
        """Boolean adjacency and utility matrices in ascending-id order."""
        order = self.sorted_ids
        pos = {vid: p for p, vid in enumerate(order)}
        n = len(order)
        adj = np.zeros((n, n), dtype=bool)
        util = np.zeros((n, n), dtype=float)
        for (i, j), u in self.edge_utility.items():
            adj[pos[i], pos[j]] = True
            util[pos[i], pos[j]] = u
        return adj, util, order

    def induced_subgraph(self, keep_ids: Iterable[int]) -> "KPDGraph":
        keep = set(keep_ids)
        missing = keep - set(self.ids)
        if missing:
            raise ValueError(f"unknown vertex ids {sorted(missing)}")
        vertices = tuple(v for v in self.vertices if v.id in keep)
        utilities = {e: u for e, u in self.edge_utility.items() if e[0] in keep and e[1] in keep}
        failures = {e: self.edge_failure_prob[e] for e in utilities}
        return KPDGraph(vertices=vertices, edge_utility=utilities, edge_failure_prob=failures)


class Cycle(NamedTuple):
    """Directed simple cycle stored in canonical rotation (minimum id first)."""

    vertices: tuple[int, ...]
    utility: float

    @property
    def edges(self) -> tuple[Edge, ...]:
        vs = self.vertices
        return tuple((vs[t], vs[(t + 1) % len(vs)]) for t in range(len(vs)))


def canonical_rotation(vertices: Sequence[int]) -> tuple[int, ...]:
    vs = tuple(vertices)
    pivot = vs.index(min(vs))
    return vs[pivot:] + vs[:pivot]


def make_cycle(graph: KPDGraph, vertices: Sequence[int]) -> Cycle:
    """Validate a vertex sequence as a simple cycle and canonicalize it."""
    vs = canonical_rotation(vertices)
    if len(vs) < 2:
        raise ValueError("a cycle needs at least two vertices")
    if len(set(vs)) != len(vs):
        raise ValueError(f"repeated vertex in cycle {vs}")
    utility = 0.0
    for t in range(len(vs)):
        edge = (vs[t], vs[(t + 1) % len(vs)])
        if edge not in graph.edge_utility:
            raise ValueError(f"cycle {vs} uses missing edge {edge}")
        utility += graph.edge_utility[edge]
    return Cycle(vertices=vs, utility=utility)


def enumerate_cycles(graph: KPDGraph, max_len: int) -> list[Cycle]:
    """All directed simple cycles of length <= max_len, canonical and sorted.

    Output order is (length, vertex tuple) ascending, so repeated calls and
    both internal strategies produce identical lists.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    if graph.n == 0 or not graph.edge_utility:
        return []
    if max_len <= 3:
        cycles = _enumerate_short_cycles(graph, max_len)
    else:
        cycles = _enumerate_cycles_dfs(graph, max_len)
    cycles.sort(key=lambda c: (len(c.vertices), c.vertices))
    return cycles


def _enumerate_short_cycles(graph: KPDGraph, max_len: int) -> list[Cycle]:
    # Vectorized enumeration for the usual max_len in {2, 3}.
    adj, util, order = graph.adjacency_arrays()
    ids = np.asarray(order)
    n = len(order)
    out: list[Cycle] = []

    mutual = adj & adj.T
    for p1, p2 in np.argwhere(np.triu(mutual, 1)):
        out.append(Cycle((int(ids[p1]), int(ids[p2])), float(util[p1, p2] + util[p2, p1])))

    if max_len >= 3:
        above = np.zeros(n, dtype=bool)
        for pi in range(n - 2):
            above[:] = False
            above[pi + 1 :] = True
            succ_i = np.nonzero(adj[pi] & above)[0]
            if succ_i.size == 0:
                continue
            pred_i = adj[:, pi]
            for pj in succ_i:
                closers = np.nonzero(adj[pj] & pred_i & above)[0]
                if closers.size == 0:
                    continue
                u_ij = util[pi, pj]
                for pk in closers:
                    out.append(
                        Cycle(
                            (int(ids[pi]), int(ids[pj]), int(ids[pk])),
                            float(u_ij + util[pj, pk] + util[pk, pi]),
                        )
                    )
    return out


def _enumerate_cycles_dfs(graph: KPDGraph, max_len: int) -> list[Cycle]:
    # Each cycle is found once, rooted at its minimum vertex id.
    succ = {i: tuple(sorted(js)) for i, js in graph.successors.items()}
    found: list[tuple[int, ...]] = []

    def extend(root: int, path: list[int], seen: set[int]) -> None:
        tail = path[-1]
        for nxt in succ[tail]:
            if nxt == root and len(path) >= 2:
                found.append(tuple(path))
            if nxt <= root or nxt in seen or len(path) >= max_len:
                continue
            seen.add(nxt)
            path.append(nxt)
            extend(root, path, seen)
            path.pop()
            seen.remove(nxt)

    for root in sorted(succ):
        extend(root, [root], {root})
    return [make_cycle(graph, vs) for vs in found]


@dataclass(frozen=True)
class RelevantSubset:
    """Vertex set evaluated jointly under subset recourse.

    ``member_cycles`` are all cycles of length <= k whose vertices lie inside
    the subset; their edges alone make the subset strongly connected, and at
    least one of them covers all but at most q of the vertices.
    """

    vertices: frozenset[int]
    k: int
    q: int
    member_cycles: tuple[Cycle, ...]

    @property
    def sorted_vertices(self) -> tuple[int, ...]:
        return tuple(sorted(self.vertices))


def _strongly_connected_via(vertex_set: frozenset[int], edges: set[Edge]) -> bool:
    """True when `edges` alone connect every vertex of the set to every other."""
    if not vertex_set:
        return False
    succ: dict[int, list[int]] = {v: [] for v in vertex_set}
    pred: dict[int, list[int]] = {v: [] for v in vertex_set}
    for i, j in edges:
        succ[i].append(j)
        pred[j].append(i)

    def reach(start: int, nxt: dict[int, list[int]]) -> set[int]:
        seen = {start}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for other in nxt[cur]:
                if other not in seen:
                    seen.add(other)
                    queue.append(other)
        return seen

    root = min(vertex_set)
    return reach(root, succ) == vertex_set and reach(root, pred) == vertex_set


def subset_is_relevant(graph: KPDGraph, vertex_set: Iterable[int], k: int, q: int) -> tuple[bool, tuple[Cycle, ...]]:
    """Definition check for one candidate set; returns (qualifies, member cycles)."""
    vset = frozenset(vertex_set)
    if len(vset) < 2 or len(vset) > k + q:
        return False, ()
    sub = graph.induced_subgraph(vset)
    members = tuple(enumerate_cycles(sub, min(k, len(vset))))
    if not members:
        return False, ()
    if not any(len(vset - set(c.vertices)) <= q for c in members):
        return False, ()
    member_edges: set[Edge] = set()
    for c in members:
        member_edges.update(c.edges)
    if not _strongly_connected_via(vset, member_edges):
        return False, ()
    return True, members


def enumerate_relevant_subsets(graph: KPDGraph, k: int, q: int) -> list[RelevantSubset]:
    """All relevant subsets for parameters (k, q), sorted by size then vertex tuple.

    Candidates are grown by unioning overlapping cycle vertex sets while the
    union stays within k + q vertices, then filtered through the definition.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if q < 0:
        raise ValueError("q must be >= 0")
    cycles = enumerate_cycles(graph, k)
    if not cycles:
        return []

    order = graph.sorted_ids
    bit = {vid: 1 << p for p, vid in enumerate(order)}
    cycle_masks = []
    for c in cycles:
        m = 0
        for v in c.vertices:
            m |= bit[v]
        cycle_masks.append(m)

    touching: dict[int, list[int]] = {vid: [] for vid in order}
    for ci, c in enumerate(cycles):
        for v in c.vertices:
            touching[v].append(ci)

    mask_to_ids = {bit[vid]: vid for vid in order}

    def ids_of(mask: int) -> tuple[int, ...]:
        out = []
        while mask:
            low = mask & -mask
            out.append(mask_to_ids[low])
            mask ^= low
        return tuple(out)

    cap = k + q
    seen: set[int] = set()
    queue: deque[int] = deque()
    for m in cycle_masks:
        if m not in seen:
            seen.add(m)
            queue.append(m)
    while queue:
        current = queue.popleft()
        candidates: set[int] = set()
        probe = current
        while probe:
            low = probe & -probe
            candidates.update(touching[mask_to_ids[low]])
            probe ^= low
        for ci in candidates:
            union = current | cycle_masks[ci]
            if union == current or union in seen:
                continue
            if union.bit_count() <= cap:
                seen.add(union)
                queue.append(union)

    subsets = []
    for mask in seen:
        vset = ids_of(mask)
        ok, members = subset_is_relevant(graph, vset, k, q)
        if ok:
            subsets.append(RelevantSubset(vertices=frozenset(vset), k=k, q=q, member_cycles=members))
    subsets.sort(key=lambda s: (len(s.vertices), s.sorted_vertices))
    return subsets


def format_graph_tables(graph: KPDGraph) -> str:
    """Two TSV blocks (vertices, edges) with deterministic float formatting."""
    lines = ["# vertices", "id\tdonor\tpatient\tpra\tgroup\tclass\tfail_prob"]
    for v in sorted(graph.vertices, key=lambda v: v.id):
        lines.append(
            f"{v.id}\t{v.donor_blood}\t{v.patient_blood}\t{v.pra_level:.12g}"
            f"\t{v.protected_feature}\t{v.sensitization_class}\t{v.vertex_failure_prob:.12g}"
        )
    lines.append("# edges")
    lines.append("from\tto\tutility\tfail_prob")
    for (i, j) in sorted(graph.edge_utility):
        lines.append(
            f"{i}\t{j}\t{graph.edge_utility[(i, j)]:.12g}\t{graph.edge_failure_prob[(i, j)]:.12g}"
        )
    return "\n".join(lines) + "\n"
