import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abcdcp.core import ValidationError
from abcdcp.edgecount import (
    DegenerateVarianceError,
    ScanStandardizer,
    default_window,
    edge_counts,
    edge_counts_batch,
    null_moments,
    scan_curves,
)
from abcdcp.simgraph import SimilarityGraph, mst, pairwise_distances

PATH4 = SimilarityGraph(4, np.array([[0, 1], [1, 2], [2, 3]]))


def complete(n):
    return SimilarityGraph(n, np.array(list(itertools.combinations(range(n), 2))))


def naive_counts(graph, labels, t):
    first = {i for i in range(graph.n) if labels[i] < t}
    r1 = sum(1 for a, b in graph.edges if a in first and b in first)
    r2 = sum(1 for a, b in graph.edges if a not in first and b not in first)
    return r1, r2


def test_path_counts():
    c = edge_counts(PATH4)
    assert (c.r1[1], c.r2[1]) == (1, 1)


def test_complete_graph_r1_is_forced(rng):
    g = complete(6)
    c = edge_counts(g, rng.permutation(6))
    t = np.arange(1, 6)
    assert np.array_equal(c.r1, t * (t - 1) // 2)


def test_counts_match_naive_recount(rng):
    g = SimilarityGraph(7, np.array([p for p in itertools.combinations(range(7), 2) if rng.random() < 0.5]))
    labels = rng.permutation(7)
    c = edge_counts(g, labels)
    for t in range(1, 7):
        r1, r2 = naive_counts(g, labels, t)
        between = sum(1 for a, b in g.edges if (labels[a] < t) != (labels[b] < t))
        assert (c.r1[t - 1], c.r2[t - 1]) == (r1, r2)
        assert r1 + r2 + between == g.num_edges


def test_batch_matches_single(rng):
    g = mst(pairwise_distances(rng.standard_normal((12, 2))))
    labels = np.array([rng.permutation(12) for _ in range(5)])
    r1, r2 = edge_counts_batch(g, labels, (2, 10))
    for u in range(5):
        c = edge_counts(g, labels[u])
        assert np.array_equal(r1[u], c.r1[1:10]) and np.array_equal(r2[u], c.r2[1:10])


def test_bad_labels():
    with pytest.raises(ValidationError):
        edge_counts(PATH4, [0, 0, 1, 2])


def test_complete_graph_moments():
    m = null_moments(complete(5), 3)
    assert math.isclose(float(m.mean_r1), 3.0) and abs(float(m.var_r1)) < 1e-12


def test_path5_moments_and_enumeration():
    g = SimilarityGraph(5, np.array([[0, 1], [1, 2], [2, 3], [3, 4]]))
    m = null_moments(g, 2)
    assert math.isclose(float(m.mean_r1), 0.4)
    perms = np.array(list(itertools.permutations(range(5))))
    r1, r2 = edge_counts_batch(g, perms, (2, 2))
    r1, r2 = r1[:, 0].astype(float), r2[:, 0].astype(float)
    assert abs(r1.var() - float(m.var_r1)) < 1e-10
    assert abs(r2.var() - float(m.var_r2)) < 1e-10
    assert abs(np.cov(r1, r2, bias=True)[0, 1] - float(m.cov_r1_r2)) < 1e-10


def test_t1_moments_vanish(rng):
    g = mst(pairwise_distances(rng.standard_normal((8, 2))))
    m = null_moments(g, 1)
    assert float(m.mean_r1) == 0 and float(m.var_r1) == 0


def test_monte_carlo_standardization(rng):
    g = mst(pairwise_distances(rng.standard_normal((30, 3))))
    labels = np.array([rng.permutation(30) for _ in range(10_000)])
    r1, _ = edge_counts_batch(g, labels, (5, 25))
    m = null_moments(g, np.arange(5, 26))
    se_mean = np.sqrt(m.var_r1 / len(labels))
    assert np.all(np.abs(r1.mean(0) - m.mean_r1) <= 4 * se_mean)
    # Variance of the sample variance uses the fourth moment estimate.
    dev = r1 - r1.mean(0)
    se_var = np.sqrt(((dev**2 - dev.var(0)) ** 2).mean(0) / len(labels))
    assert np.all(np.abs(dev.var(0) - m.var_r1) <= 4 * se_var)


def test_degenerate_variance_aborts():
    with pytest.raises(DegenerateVarianceError):
        ScanStandardizer(complete(6), (2, 4))


def test_standardizer_definitions(rng):
    g = mst(pairwise_distances(rng.standard_normal((20, 2))))
    std = ScanStandardizer(g, (2, 18))
    mean_r1 = null_moments(g, np.arange(2, 19)).mean_r1
    mean_r2 = null_moments(g, np.arange(2, 19)).mean_r2
    zw, zd, m = std(mean_r1, mean_r2)
    assert np.allclose(zw, 0, atol=1e-12) and np.allclose(zd, 0, atol=1e-12)
    assert np.array_equal(m, np.maximum(zw, np.abs(zd)))


def test_m_from_stored_counts_is_bit_identical(rng):
    g = mst(pairwise_distances(rng.standard_normal((25, 2))))
    curves = scan_curves(g, window=(3, 22))
    c = edge_counts(g)
    _, _, m = ScanStandardizer(g, (3, 22))(c.r1[2:22], c.r2[2:22])
    assert np.array_equal(m, curves.m)


def test_default_window():
    assert default_window(100) == (5, 95)
    assert default_window(20) == (2, 18)
    with pytest.raises(ValidationError):
        default_window(3)


def test_beta_mixture_argmax_near_change():
    # Bivariate Beta(2,4) before t=40, Beta(4,2) after, 1-MST.
    hits = 0
    for s in range(100):
        r = np.random.default_rng(1000 + s)
        x = np.vstack([r.beta(2, 4, size=(40, 2)), r.beta(4, 2, size=(40, 2))])
        c = scan_curves(mst(pairwise_distances(x)))
        hits += abs(int(c.times[np.argmax(c.m)]) - 40) <= 5
    assert hits >= 95


graphs = st.integers(4, 9).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.booleans(), min_size=n * (n - 1) // 2,
                                             max_size=n * (n - 1) // 2), st.permutations(range(n)))
)


@given(graphs)
def test_count_invariants(data):
    n, keep, labels = data
    pairs = [p for p, k in zip(itertools.combinations(range(n), 2), keep) if k]
    g = SimilarityGraph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))
    c = edge_counts(g, labels)
    assert c.r1[0] == 0 and c.r2[-1] == 0
    assert np.all(np.diff(c.r1) >= 0) and np.all(np.diff(c.r2) <= 0)
    assert np.all(c.r1 + c.r2 <= g.num_edges)
