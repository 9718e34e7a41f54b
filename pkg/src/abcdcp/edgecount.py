"""Within-sample edge counts and the max-type edge-count scan statistic.

For a split at time ``t`` the first sample is the observations at times
``1..t`` and the second sample those at ``t+1..n``. ``R1(t)`` counts graph
edges inside the first sample, ``R2(t)`` edges inside the second.

Null moments are exact under the permutation distribution (uniform over
all ``n!`` relabelings of time). They depend on the graph only through
``n``, the edge count ``|G|`` and the number of edge pairs sharing a node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .core import ValidationError
from .simgraph import SimilarityGraph

__all__ = [
    "EdgeCountCurves",
    "NullMoments",
    "ScanCurves",
    "ScanStandardizer",
    "DegenerateVarianceError",
    "edge_counts",
    "edge_counts_batch",
    "weight_p",
    "null_moments",
    "default_window",
    "scan_curves",
]


class DegenerateVarianceError(ValidationError):
    """A null variance is zero at some time inside the scan window."""

    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


@dataclass(frozen=True, eq=False)
class EdgeCountCurves:
    """``r1[t-1]``, ``r2[t-1]`` for ``t = 1..n-1``."""

    r1: np.ndarray
    r2: np.ndarray
    n: int
    num_edges: int
    shared_pairs: int

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.n)


@dataclass(frozen=True)
class NullMoments:
    mean_r1: np.ndarray
    mean_r2: np.ndarray
    var_r1: np.ndarray
    var_r2: np.ndarray
    cov_r1_r2: np.ndarray
    mean_rw: np.ndarray
    var_rw: np.ndarray
    mean_rdiff: np.ndarray
    var_rdiff: np.ndarray


@dataclass(frozen=True, eq=False)
class ScanCurves:
    """Standardized curves over ``t = window[0]..window[1]``."""

    z_w: np.ndarray
    z_diff: np.ndarray
    m: np.ndarray
    window: tuple[int, int]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.window[0], self.window[1] + 1)


def _check_labels(labels, n):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,) or not np.array_equal(np.sort(labels), np.arange(n)):
        raise ValidationError(f"labels must be a permutation of 0..{n - 1}")
    return labels


def edge_counts(graph: SimilarityGraph, labels=None) -> EdgeCountCurves:
    """Within-sample edge counts for every split ``t``.

    ``labels[i]`` is the 0-based time position of node ``i``; ``None`` means
    the identity (observed order).
    """
    n = graph.n
    labels = np.arange(n) if labels is None else _check_labels(labels, n)
    a = labels[graph.edges[:, 0]]
    b = labels[graph.edges[:, 1]]
    hi = np.bincount(np.maximum(a, b), minlength=n)
    lo = np.bincount(np.minimum(a, b), minlength=n)
    # r1(t): edges whose later endpoint sits at position < t.
    r1 = np.cumsum(hi)[:-1]
    # r2(t): edges whose earlier endpoint sits at position >= t.
    r2 = np.cumsum(lo[::-1])[::-1][1:]
    return EdgeCountCurves(r1, r2, n, graph.num_edges, graph.shared_pairs)


@nb.njit(cache=True, nogil=True)
def _batch_counts(ei, ej, labels, lo_t, hi_t):
    U, n = labels.shape
    W = hi_t - lo_t + 1
    r1 = np.zeros((U, W), dtype=np.int64)
    r2 = np.zeros((U, W), dtype=np.int64)
    for u in range(U):
        hmax = np.zeros(n, dtype=np.int64)
        hmin = np.zeros(n, dtype=np.int64)
        lab = labels[u]
        for e in range(ei.shape[0]):
            a = lab[ei[e]]
            b = lab[ej[e]]
            if a < b:
                hmax[b] += 1
                hmin[a] += 1
            else:
                hmax[a] += 1
                hmin[b] += 1
        acc = 0
        for v in range(hi_t):
            acc += hmax[v]
            if v + 1 >= lo_t:
                r1[u, v + 1 - lo_t] = acc
        acc = 0
        for v in range(n - 1, lo_t - 1, -1):
            acc += hmin[v]
            if v <= hi_t:
                r2[u, v - lo_t] = acc
    return r1, r2


def edge_counts_batch(graph: SimilarityGraph, labels: np.ndarray, window: tuple[int, int]):
    """``(r1, r2)`` arrays of shape ``U x W`` for a batch of label rows.

    Columns correspond to ``t = window[0]..window[1]``. Rows are computed
    independently, so the result does not depend on thread count.
    """
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    lo_t, hi_t = window
    if not 1 <= lo_t <= hi_t <= graph.n - 1:
        raise ValidationError(f"window {window} outside [1, {graph.n - 1}]")
    ei = np.ascontiguousarray(graph.edges[:, 0])
    ej = np.ascontiguousarray(graph.edges[:, 1])
    return _batch_counts(ei, ej, labels, lo_t, hi_t)


def weight_p(t, n):
    """Weight on ``R2`` in ``R_w = (1 - p) R1 + p R2``."""
    return (np.asarray(t, dtype=np.float64) - 1.0) / (n - 2.0)


def _falling(x, k):
    out = np.ones_like(x, dtype=np.float64)
    for i in range(k):
        out = out * (x - i)
    return out


def _moments(n: int, m: int, shared: int, t) -> NullMoments:
    t = np.asarray(t, dtype=np.float64)
    s = n - t
    nf = float(n)
    two_path = 2.0 * shared  # ordered edge pairs sharing one node
    disjoint = float(m) * (m - 1) - two_path  # ordered pairs of node-disjoint edges
    n2, n3, n4 = _falling(nf, 2), _falling(nf, 3), _falling(nf, 4)

    def within(size):
        p1 = _falling(size, 2) / n2
        p2 = _falling(size, 3) / n3
        p3 = _falling(size, 4) / n4
        mean = m * p1
        second = m * p1 + two_path * p2 + disjoint * p3
        return mean, second - mean * mean

    mu1, v1 = within(t)
    mu2, v2 = within(s)
    cross = disjoint * _falling(t, 2) * _falling(s, 2) / n4
    cov = cross - mu1 * mu2
    p = weight_p(t, n)
    q = 1.0 - p
    return NullMoments(
        mean_r1=mu1,
        mean_r2=mu2,
        var_r1=v1,
        var_r2=v2,
        cov_r1_r2=cov,
        mean_rw=q * mu1 + p * mu2,
        var_rw=q * q * v1 + p * p * v2 + 2.0 * p * q * cov,
        mean_rdiff=mu1 - mu2,
        var_rdiff=v1 + v2 - 2.0 * cov,
    )


def null_moments(graph: SimilarityGraph, t) -> NullMoments:
    """Exact permutation-null moments of R1, R2, R_w, R_diff at ``t``.

    ``t`` may be a scalar or an array of split times in ``1..n-1``.
    """
    n = graph.n
    if n < 4:
        raise ValidationError(f"null moments need n >= 4, got n={n}")
    tt = np.asarray(t)
    if np.any(tt < 1) or np.any(tt > n - 1):
        raise ValidationError(f"t must lie in [1, {n - 1}]")
    return _moments(n, graph.num_edges, graph.shared_pairs, tt)


def default_window(n: int, frac: float = 0.05) -> tuple[int, int]:
    """Boundary-trimmed candidate range ``(n0, n - n0)`` with ``n0 = floor(frac n)``.

    Clamped to ``[2, n-2]``: at ``t = 1`` and ``t = n-1`` the weighted count
    is constant and cannot be standardized.
    """
    if n < 4:
        raise ValidationError(f"scan needs n >= 4, got n={n}")
    n0 = int(np.floor(frac * n))
    return max(n0, 2), min(n - n0, n - 2)


class ScanStandardizer:
    """Null moments of one graph over a window, reused across permutations."""

    def __init__(self, graph: SimilarityGraph, window: tuple[int, int]):
        lo, hi = window
        n = graph.n
        if not 1 <= lo <= hi <= n - 1:
            raise ValidationError(f"window {window} outside [1, {n - 1}]")
        self.window = (int(lo), int(hi))
        t = np.arange(lo, hi + 1)
        mom = null_moments(graph, t)
        # Relative tolerance guards against cancellation leaving a tiny
        # positive variance where the exact value is zero.
        scale = max(1.0, float(graph.num_edges) ** 2)
        for name, var in (("R_w", mom.var_rw), ("R_diff", mom.var_rdiff)):
            bad = np.flatnonzero(var <= 1e-12 * scale)
            if bad.size:
                tb = int(t[bad[0]])
                raise DegenerateVarianceError(
                    f"null variance of {name} is zero at t={tb}; graph is degenerate for this window",
                    t=tb,
                )
        self.p = weight_p(t, n)
        self.q = 1.0 - self.p
        self.mean_w = mom.mean_rw
        self.sd_w = np.sqrt(mom.var_rw)
        self.mean_diff = mom.mean_rdiff
        self.sd_diff = np.sqrt(mom.var_rdiff)

    def __call__(self, r1, r2):
        """Return ``(z_w, z_diff, m)``; inputs broadcast over leading axes."""
        r1 = np.asarray(r1, dtype=np.float64)
        r2 = np.asarray(r2, dtype=np.float64)
        z_w = (self.q * r1 + self.p * r2 - self.mean_w) / self.sd_w
        z_diff = (r1 - r2 - self.mean_diff) / self.sd_diff
        return z_w, z_diff, np.maximum(z_w, np.abs(z_diff))


def scan_curves(graph: SimilarityGraph, labels=None, window=None) -> ScanCurves:
    """Standardized ``Z_w``, ``Z_diff`` and ``M(t) = max(Z_w, |Z_diff|)``."""
    if window is None:
        window = default_window(graph.n)
    std = ScanStandardizer(graph, window)
    counts = edge_counts(graph, labels)
    lo, hi = std.window
    z_w, z_diff, m = std(counts.r1[lo - 1:hi], counts.r2[lo - 1:hi])
    return ScanCurves(z_w, z_diff, m, std.window)
