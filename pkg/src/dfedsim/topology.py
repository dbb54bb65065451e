"""Communication graphs, per-round generators and mixing-weight construction.

Graphs are directed: an edge i -> j means client i transmits to client j.
Undirected kinds simply emit symmetric edge sets. Mixing matrices follow the
receiver-indexed convention: entry [i, j] is the weight client i applies to
the value arriving from client j, so one gossip step is `weights @ values`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, SchemeError
from .rng import stream

# Mixing schemes.
PUSH_COLUMN = "push_column"  # sender-normalized, every column sums to 1
PULL_ROW = "pull_row"        # receiver-normalized, every row sums to 1
DOUBLY = "doubly"            # Metropolis-Hastings weights on symmetric graphs
SCHEMES = (PUSH_COLUMN, PULL_ROW, DOUBLY)

# Schedule kinds.
RANDOM_DIRECTED = "random_directed"
RANDOM_UNDIRECTED = "random_undirected"
RING = "ring"
COMPLETE = "complete"
FROM_FILE = "from_file"
KINDS = (RANDOM_DIRECTED, RANDOM_UNDIRECTED, RING, COMPLETE, FROM_FILE)


@dataclass(frozen=True)
class DirectedGraph:
    """Directed graph on clients 0..m-1 stored as ordered out-adjacency lists.

    Self-loops are never part of the edge set; weight construction adds the
    diagonal separately.
    """

    m: int
    out_edges: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.out_edges) != self.m:
            raise ConfigurationError(
                f"out_edges has {len(self.out_edges)} rows for m={self.m}"
            )
        for i, nbrs in enumerate(self.out_edges):
            if len(set(nbrs)) != len(nbrs):
                raise ConfigurationError(f"duplicate out-neighbors for client {i}")
            for j in nbrs:
                if j == i:
                    raise ConfigurationError(f"self-loop on client {i}")
                if not 0 <= j < self.m:
                    raise ConfigurationError(f"edge endpoint {j} outside [0, {self.m})")

    @cached_property
    def in_edges(self) -> tuple[tuple[int, ...], ...]:
        """Transpose adjacency: in_edges[i] lists clients with an edge into i."""
        incoming: list[list[int]] = [[] for _ in range(self.m)]
        for i, nbrs in enumerate(self.out_edges):
            for j in nbrs:
                incoming[j].append(i)
        return tuple(tuple(sorted(lst)) for lst in incoming)

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((i, j) for i, nbrs in enumerate(self.out_edges) for j in nbrs)

    def is_symmetric(self) -> bool:
        return all((j, i) in self.edge_set for (i, j) in self.edge_set)


@dataclass(frozen=True)
class MixingMatrix:
    """Dense nonnegative gossip weights for one round, tagged by scheme."""

    m: int
    weights: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.weights.shape != (self.m, self.m):
            raise ConfigurationError(f"weights shape {self.weights.shape} != ({self.m}, {self.m})")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown mixing scheme {self.scheme!r}")


@dataclass(frozen=True)
class TopologySchedule:
    """Seeded generator of one communication graph per round.

    The graph for round t is a pure function of (seed, t, kind); `window` is
    the connectivity window size used by the schedule checker.
    """

    m: int
    kind: str
    seed: int = 0
    window: int = 1
    out_degree: int | None = None   # random_directed
    degree: int | None = None       # random_undirected
    path: str | None = None         # from_file, kept for config echo
    file_rounds: tuple[tuple[tuple[int, ...], ...], ...] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown topology kind {self.kind!r}")
        if self.m < 1:
            raise ConfigurationError("client count must be >= 1")
        if self.window < 1:
            raise ConfigurationError("connectivity window must be >= 1")
        if self.kind == RANDOM_DIRECTED:
            if self.out_degree is None or not 0 <= self.out_degree <= self.m - 1:
                raise ConfigurationError(
                    f"out_degree must be in [0, {self.m - 1}], got {self.out_degree}"
                )
        if self.kind == RANDOM_UNDIRECTED:
            if self.degree is None or not 0 <= self.degree <= self.m - 1:
                raise ConfigurationError(
                    f"degree must be in [0, {self.m - 1}], got {self.degree}"
                )
        if self.kind == FROM_FILE and not self.file_rounds:
            raise ConfigurationError("from_file schedule requires a parsed round list")


def parse_schedule_file(text: str, m: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """Parse a plain-text schedule: one `round_index: i->j, i->k` line per round.

    Rounds must be contiguous from 0; a schedule of R rounds repeats with
    period R when queried beyond the file.
    """
    by_round: dict[int, list[tuple[int, int]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(":")
        try:
            r = int(head.strip())
        except ValueError:
            raise ConfigurationError(f"line {lineno}: bad round index {head.strip()!r}")
        if r in by_round:
            raise ConfigurationError(f"line {lineno}: duplicate round {r}")
        edges: list[tuple[int, int]] = []
        rest = rest.strip()
        if rest:
            for token in rest.split(","):
                mm = re.fullmatch(r"\s*(\d+)\s*->\s*(\d+)\s*", token)
                if not mm:
                    raise ConfigurationError(f"line {lineno}: bad edge {token.strip()!r}")
                edges.append((int(mm.group(1)), int(mm.group(2))))
        by_round[r] = edges
    if not by_round:
        raise ConfigurationError("schedule file defines no rounds")
    if sorted(by_round) != list(range(len(by_round))):
        raise ConfigurationError("schedule rounds must be contiguous from 0")
    rounds = []
    for r in range(len(by_round)):
        out: list[list[int]] = [[] for _ in range(m)]
        for i, j in by_round[r]:
            if not (0 <= i < m and 0 <= j < m):
                raise ConfigurationError(f"round {r}: edge {i}->{j} outside [0, {m})")
            if j not in out[i]:
                out[i].append(j)
        rounds.append(tuple(tuple(sorted(nbrs)) for nbrs in out))
    return tuple(rounds)


def schedule_from_file(path: str, m: int, window: int = 1) -> TopologySchedule:
    with open(path, "r", encoding="utf-8") as fh:
        rounds = parse_schedule_file(fh.read(), m)
    return TopologySchedule(m=m, kind=FROM_FILE, window=window, path=path, file_rounds=rounds)


def generate_round_topology(schedule: TopologySchedule, round_index: int) -> DirectedGraph:
    """Graph for one round; deterministic in (schedule.seed, round_index)."""
    m = schedule.m
    if schedule.kind == COMPLETE:
        out = tuple(tuple(j for j in range(m) if j != i) for i in range(m))
    elif schedule.kind == RING:
        out = tuple(((i + 1) % m,) if m > 1 else () for i in range(m))
    elif schedule.kind == FROM_FILE:
        assert schedule.file_rounds is not None
        out = schedule.file_rounds[round_index % len(schedule.file_rounds)]
    elif schedule.kind == RANDOM_DIRECTED:
        rng = stream(schedule.seed, "topology", round_index)
        out = tuple(_sample_neighbors(rng, m, i, schedule.out_degree) for i in range(m))
    elif schedule.kind == RANDOM_UNDIRECTED:
        # Each client picks `degree` partners; the edge set is symmetrized, so
        # realized degrees are at least `degree`.
        rng = stream(schedule.seed, "topology", round_index)
        chosen = [_sample_neighbors(rng, m, i, schedule.degree) for i in range(m)]
        sym: list[set[int]] = [set(nbrs) for nbrs in chosen]
        for i, nbrs in enumerate(chosen):
            for j in nbrs:
                sym[j].add(i)
        out = tuple(tuple(sorted(s)) for s in sym)
    else:  # pragma: no cover - guarded by TopologySchedule validation
        raise ConfigurationError(f"unknown topology kind {schedule.kind!r}")
    return DirectedGraph(m=m, out_edges=out)


def _sample_neighbors(rng: np.random.Generator, m: int, i: int, k: int) -> tuple[int, ...]:
    others = np.array([j for j in range(m) if j != i], dtype=np.int64)
    if k == 0 or others.size == 0:
        return ()
    picked = rng.choice(others, size=k, replace=False)
    return tuple(sorted(int(j) for j in picked))


def build_mixing_matrix(graph: DirectedGraph, scheme: str) -> MixingMatrix:
    """Uniform neighbor weights with a self-loop share in every scheme.

    pull_row:    [i, j] = 1/(|in(i)|+1) for j in in(i), receiver-normalized.
    push_column: [j, i] = 1/(|out(i)|+1) for j in out(i), sender-normalized.
    doubly:      Metropolis-Hastings 1/(1+max(deg_i, deg_j)) on symmetric graphs.

    The diagonal is constructed as the exact floating-point complement of the
    off-diagonal row (or column) sum, so the declared stochasticity survives
    repeated mixing without drift.
    """
    m = graph.m
    off = np.zeros((m, m), dtype=np.float64)
    if scheme == PULL_ROW:
        for i in range(m):
            incoming = graph.in_edges[i]
            w = 1.0 / (len(incoming) + 1)
            for j in incoming:
                off[i, j] = w
        diag = 1.0 - off @ np.ones(m)
    elif scheme == PUSH_COLUMN:
        for i in range(m):
            outgoing = graph.out_edges[i]
            w = 1.0 / (len(outgoing) + 1)
            for j in outgoing:
                off[j, i] = w
        diag = 1.0 - off.T @ np.ones(m)
    elif scheme == DOUBLY:
        if not graph.is_symmetric():
            raise SchemeError("doubly-stochastic weights require a symmetric graph")
        deg = [len(nbrs) for nbrs in graph.out_edges]
        for i in range(m):
            for j in graph.out_edges[i]:
                off[i, j] = 1.0 / (1 + max(deg[i], deg[j]))
        diag = 1.0 - off @ np.ones(m)
    else:
        raise ConfigurationError(f"unknown mixing scheme {scheme!r}")
    weights = off
    weights[np.arange(m), np.arange(m)] = diag
    return MixingMatrix(m=m, weights=weights, scheme=scheme)


def union_graph(graphs: list[DirectedGraph]) -> DirectedGraph:
    """Edge-set union of graphs sharing the same client count."""
    if not graphs:
        raise ConfigurationError("union of an empty graph list")
    m = graphs[0].m
    merged: list[set[int]] = [set() for _ in range(m)]
    for g in graphs:
        if g.m != m:
            raise ConfigurationError(f"cannot union graphs with m={g.m} and m={m}")
        for i, nbrs in enumerate(g.out_edges):
            merged[i].update(nbrs)
    return DirectedGraph(m=m, out_edges=tuple(tuple(sorted(s)) for s in merged))


def is_strongly_connected(graph: DirectedGraph) -> bool:
    """True when every client reaches every other along directed edges."""
    m = graph.m
    if m == 1:
        return True
    return _reaches_all(graph.out_edges, m) and _reaches_all(graph.in_edges, m)


def _reaches_all(adj: tuple[tuple[int, ...], ...], m: int) -> bool:
    seen = np.zeros(m, dtype=bool)
    seen[0] = True
    frontier = [0]
    count = 1
    while frontier:
        nxt = []
        for i in frontier:
            for j in adj[i]:
                if not seen[j]:
                    seen[j] = True
                    count += 1
                    nxt.append(j)
        frontier = nxt
    return count == m


def check_window_connectivity(
    schedule: TopologySchedule, start_round: int, window: int | None = None
) -> bool:
    """Whether the union of rounds [start, start+window) is strongly connected."""
    b = schedule.window if window is None else window
    if b < 1:
        raise ConfigurationError("connectivity window must be >= 1")
    graphs = [generate_round_topology(schedule, t) for t in range(start_round, start_round + b)]
    return is_strongly_connected(union_graph(graphs))
