"""Distances and similarity graphs (MST, k-MST, k-NN) over observations.

Ties between equal-weight edges are always broken toward the
lexicographically smaller node pair ``(i, j)``, so graphs are reproducible
across platforms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba as nb
import numpy as np
from scipy.spatial.distance import pdist, squareform

from .core import SeriesTensor, ValidationError

__all__ = [
    "GraphWarning",
    "DistanceMatrix",
    "SimilarityGraph",
    "pairwise_distances",
    "condensed_distances",
    "mst",
    "k_mst",
    "k_mst_condensed",
    "knn_graph",
    "max_feasible_k",
    "write_edge_list",
    "read_edge_list",
]

_SCIPY_METRIC = {"L2": "euclidean", "L1": "cityblock"}


class GraphWarning(UserWarning):
    """Emitted when a requested graph cannot be built exactly as asked."""


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    metric_tag: str = "L2"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError("distance matrix must be square")
        if not np.all(np.isfinite(v)):
            raise ValidationError("distance matrix has non-finite entries")
        if np.any(np.diag(v) != 0):
            raise ValidationError("distance matrix diagonal must be zero")
        if np.any(v < 0):
            raise ValidationError("distances must be nonnegative")
        if not np.array_equal(v, v.T):
            raise ValidationError("distance matrix must be symmetric")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def condensed(self) -> np.ndarray:
        return squareform(self.values, checks=False)


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Undirected simple graph on nodes ``0..n-1``.

    ``edges`` is an ``m x 2`` int array with ``i < j`` per row, sorted
    lexicographically. ``layer`` gives, for k-MST graphs, the spanning tree
    each edge belongs to (0-based); it is ``None`` for other graphs.
    """

    n: int
    edges: np.ndarray
    layer: np.ndarray | None = None
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ValidationError(f"edge endpoint out of range for n={self.n}")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValidationError("self-loops are not allowed")
        e = np.sort(e, axis=1)
        order = np.lexsort((e[:, 1], e[:, 0]))
        e = e[order]
        if len(e) > 1 and np.any(np.all(e[1:] == e[:-1], axis=1)):
            raise ValidationError("duplicate edges are not allowed")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)
        if self.layer is not None:
            lay = np.asarray(self.layer, dtype=np.int64)[order]
            lay.setflags(write=False)
            object.__setattr__(self, "layer", lay)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    @property
    def shared_pairs(self) -> int:
        """Unordered pairs of edges sharing exactly one node."""
        deg = self.degree.astype(np.int64)
        return int(np.sum(deg * (deg - 1) // 2))

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def layer_edges(self, i: int) -> np.ndarray:
        if self.layer is None:
            raise ValidationError("graph has no layer information")
        return self.edges[self.layer == i]


def pairwise_distances(series: SeriesTensor | np.ndarray, metric: str | Callable = "L2") -> DistanceMatrix:
    """Exact pairwise distances between the rows of ``series``.

    ``metric`` is ``"L2"``, ``"L1"`` or a callable ``f(x, y) -> float``
    (tagged ``"user"``).
    """
    x = series.values if isinstance(series, SeriesTensor) else np.asarray(series, dtype=np.float64)
    tag = metric if isinstance(metric, str) else "user"
    cond = condensed_distances(x, metric)
    return DistanceMatrix(squareform(cond, checks=False), tag)


def condensed_distances(x: np.ndarray, metric: str | Callable = "L2") -> np.ndarray:
    """Upper-triangle distances in row-major ``(i, j), i < j`` order."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need an n x d array with n >= 2")
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite observation values")
    if callable(metric):
        return pdist(x, metric)
    if metric not in _SCIPY_METRIC:
        raise ValidationError(f"unknown metric {metric!r}; use 'L2', 'L1' or a callable")
    return pdist(x, _SCIPY_METRIC[metric])


def max_feasible_k(n: int) -> int:
    """Largest k with k(n-1) <= n(n-1)/2."""
    return n // 2


@nb.njit(cache=True, nogil=True)
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@nb.njit(cache=True, nogil=True)
def _kruskal_layers(n, ei, ej, order, k):
    m = order.shape[0]
    layer_of = np.full(m, -1, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    parent = np.empty(n, dtype=np.int64)
    rank = np.empty(n, dtype=np.int64)
    for lay in range(k):
        for v in range(n):
            parent[v] = v
            rank[v] = 0
        c = 0
        for pos in range(m):
            e = order[pos]
            if layer_of[e] >= 0:
                continue
            a = _find(parent, ei[e])
            b = _find(parent, ej[e])
            if a == b:
                continue
            if rank[a] < rank[b]:
                a, b = b, a
            parent[b] = a
            if rank[a] == rank[b]:
                rank[a] += 1
            layer_of[e] = lay
            c += 1
            if c == n - 1:
                break
        counts[lay] = c
    return layer_of, counts


_PAIR_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _upper_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = _PAIR_CACHE.get(n)
    if pairs is None:
        ei, ej = np.triu_indices(n, 1)
        pairs = (ei.astype(np.int64), ej.astype(np.int64))
        if len(_PAIR_CACHE) < 64:
            _PAIR_CACHE[n] = pairs
    return pairs


def k_mst_condensed(cond: np.ndarray, n: int, k: int) -> SimilarityGraph:
    """k-MST from condensed (upper-triangle, row-major) distances."""
    if n < 2:
        raise ValidationError("need n >= 2")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    kmax = max_feasible_k(n)
    if k > kmax:
        raise ValidationError(
            f"k={k} infeasible for n={n}: k(n-1) exceeds n(n-1)/2 edges; maximum feasible k is {kmax}"
        )
    ei, ej = _upper_pairs(n)
    # Stable sort keeps row-major (i, j) order among equal weights.
    order = np.argsort(cond, kind="stable")
    layer_of, counts = _kruskal_layers(n, ei, ej, order, k)
    keep = layer_of >= 0
    notes = ()
    short = np.flatnonzero(counts < n - 1)
    if short.size:
        msg = (
            f"k-MST layer(s) {[int(s) + 1 for s in short]} could not span all {n} nodes; "
            "minimum spanning forest used"
        )
        warnings.warn(msg, GraphWarning, stacklevel=3)
        notes = (msg,)
    return SimilarityGraph(n, np.column_stack((ei[keep], ej[keep])), layer_of[keep], notes)


def k_mst(dist: DistanceMatrix, k: int) -> SimilarityGraph:
    """Union of ``k`` edge-disjoint spanning trees built greedily.

    Tree ``i`` is a minimum spanning tree of the graph with the edges of
    trees ``1..i-1`` removed. If that remainder is disconnected a minimum
    spanning forest is used and a :class:`GraphWarning` is issued.
    """
    return k_mst_condensed(dist.condensed(), dist.n, k)


def mst(dist: DistanceMatrix) -> SimilarityGraph:
    return k_mst(dist, 1)


def knn_graph(dist: DistanceMatrix, k: int) -> SimilarityGraph:
    """Symmetrized k-nearest-neighbour graph (lower index wins ties)."""
    n = dist.n
    if not 1 <= k <= n - 1:
        raise ValidationError(f"k must be in [1, {n - 1}], got {k}")
    d = dist.values
    idx = np.arange(n)
    pairs = set()
    for i in range(n):
        others = idx[idx != i]
        order = np.lexsort((others, d[i, others]))
        for j in others[order[:k]]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    return SimilarityGraph(n, np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2))


def write_edge_list(graph: SimilarityGraph, path) -> None:
    """Write ``i j`` per line, 1-based."""
    lines = [f"{a + 1} {b + 1}" for a, b in graph.edges]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_edge_list(path, n: int) -> SimilarityGraph:
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 'i j'")
        edges.append((int(parts[0]) - 1, int(parts[1]) - 1))
    return SimilarityGraph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
