"""Site adjacency graphs, hop distances and distance-decay correlation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, LinAlgError

from .errors import GraphError, InvalidArgumentError, NumericalError

__all__ = [
    "SpatialGraph",
    "validate_graph",
    "connected_components",
    "graph_distance_matrix",
    "correlation_matrix",
    "lattice_graph",
    "read_edge_list",
    "write_edge_list",
]


@dataclass(frozen=True)
class SpatialGraph:
    site_ids: tuple
    edges: frozenset

    def __init__(self, site_ids: Iterable[Hashable], edges: Iterable[tuple]):
        ids = tuple(site_ids)
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate site ids in graph")
        known = set(ids)
        canon = set()
        for a, b in edges:
            if a == b:
                raise GraphError(f"self-loop on site {a!r}")
            if a not in known or b not in known:
                missing = a if a not in known else b
                raise GraphError(f"edge endpoint {missing!r} is not a listed site")
            pair = frozenset((a, b))
            if pair in canon:
                raise GraphError(f"duplicate edge {a!r}-{b!r}")
            canon.add(pair)
        object.__setattr__(self, "site_ids", ids)
        object.__setattr__(self, "edges", frozenset(canon))

    @property
    def n(self) -> int:
        return len(self.site_ids)

    def adjacency_lists(self) -> list[list[int]]:
        index = {s: i for i, s in enumerate(self.site_ids)}
        adj = [[] for _ in self.site_ids]
        for pair in self.edges:
            a, b = tuple(pair)
            adj[index[a]].append(index[b])
            adj[index[b]].append(index[a])
        for nbrs in adj:
            nbrs.sort()
        return adj

    def subgraph_order(self, site_ids: Sequence[Hashable]) -> np.ndarray:
        """Positions of ``site_ids`` within this graph's site list."""
        index = {s: i for i, s in enumerate(self.site_ids)}
        missing = [s for s in site_ids if s not in index]
        if missing:
            raise GraphError(f"sites missing from graph: {missing[:10]}")
        return np.array([index[s] for s in site_ids], dtype=int)


def _bfs(adj, source):
    dist = np.full(len(adj), -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def connected_components(g: SpatialGraph) -> list[list]:
    adj = g.adjacency_lists()
    seen = np.zeros(g.n, dtype=bool)
    comps = []
    for s in range(g.n):
        if not seen[s]:
            reach = np.flatnonzero(_bfs(adj, s) >= 0)
            seen[reach] = True
            comps.append([g.site_ids[i] for i in reach])
    return comps


def validate_graph(g: SpatialGraph) -> None:
    """Raise :class:`GraphError` unless ``g`` is non-empty and connected.

    Unreachable pairs would have infinite distance and zero correlation,
    which is incompatible with the all-ones correlation of a spatially
    static coefficient, so disconnected graphs are refused outright.
    """
    if g.n == 0:
        raise GraphError("graph has no sites")
    comps = connected_components(g)
    if len(comps) > 1:
        listing = ", ".join("{" + ",".join(map(str, c)) + "}" for c in comps)
        raise GraphError(f"graph is disconnected; components: {listing}")


def graph_distance_matrix(g: SpatialGraph) -> np.ndarray:
    """All-pairs hop counts by breadth-first search from every site."""
    validate_graph(g)
    adj = g.adjacency_lists()
    return np.vstack([_bfs(adj, s) for s in range(g.n)])


def correlation_matrix(D, gamma: float, nugget: float = 0.0) -> np.ndarray:
    """``exp(-gamma * D) + nugget * I``.

    Positive definiteness is confirmed with a Cholesky factorization
    whenever ``gamma > 0`` or ``nugget > 0``; the ``gamma = nugget = 0``
    case is the singular all-ones matrix and is returned as is.
    """
    if not (gamma >= 0) or not (nugget >= 0):
        raise InvalidArgumentError("gamma and nugget must be non-negative")
    D = np.asarray(D)
    H = np.exp(-gamma * D)
    if nugget:
        H[np.diag_indices_from(H)] += nugget
    if gamma > 0 or nugget > 0:
        try:
            cho_factor(H, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise NumericalError(
                f"correlation matrix not positive definite at gamma={gamma}; "
                f"nugget {nugget} too small") from exc
    return H


def lattice_graph(rows: int = 8, cols: int = 8) -> SpatialGraph:
    """Rook-adjacency grid with sites labelled ``r{i}c{j}`` in row-major order."""
    ids = [f"r{i}c{j}" for i in range(rows) for j in range(cols)]
    edges = []
    for i in range(rows):
        for j in range(cols):
            if j + 1 < cols:
                edges.append((f"r{i}c{j}", f"r{i}c{j + 1}"))
            if i + 1 < rows:
                edges.append((f"r{i}c{j}", f"r{i + 1}c{j}"))
    return SpatialGraph(ids, edges)


def read_edge_list(path, site_ids: Sequence[Hashable] | None = None) -> SpatialGraph:
    """Parse a whitespace-separated edge list (``#`` starts a comment line).

    A line holding a single id declares a site without neighbours.

    Site order follows ``site_ids`` when given (every one of them must
    appear); nodes only mentioned in the file are appended in order of
    first appearance.
    """
    edges, seen = [], []
    seen_set = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) not in (1, 2):
                raise GraphError(f"{path}:{lineno}: expected two site ids, got {len(parts)}")
            if len(parts) == 2:
                edges.append(tuple(parts))
            for s in parts:
                if s not in seen_set:
                    seen_set.add(s)
                    seen.append(s)
    if site_ids is None:
        order = seen
    else:
        site_ids = [str(s) for s in site_ids]
        missing = [s for s in site_ids if s not in seen_set]
        if missing:
            raise GraphError(f"dataset sites absent from graph {path}: {missing[:10]}")
        listed = set(site_ids)
        order = site_ids + [s for s in seen if s not in listed]
    dedup, keys = [], set()
    for a, b in edges:
        key = frozenset((a, b))
        if key not in keys:
            keys.add(key)
            dedup.append((a, b))
    return SpatialGraph(order, dedup)


def write_edge_list(g: SpatialGraph, path) -> None:
    """Inverse of :func:`read_edge_list`.  Every site is first declared on
    its own line so the site order survives a round trip."""
    from .io import atomic_write_text

    index = {s: i for i, s in enumerate(g.site_ids)}
    pairs = sorted(sorted((index[a], index[b])) for a, b in map(tuple, g.edges))
    lines = ["# sites", *(str(s) for s in g.site_ids), "# edges"]
    lines += [f"{g.site_ids[i]} {g.site_ids[j]}" for i, j in pairs]
    atomic_write_text(path, "\n".join(lines) + "\n")
