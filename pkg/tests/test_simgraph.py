import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abcdcp.core import SeriesTensor, ValidationError
from abcdcp.simgraph import (
    DistanceMatrix,
    GraphWarning,
    SimilarityGraph,
    k_mst,
    knn_graph,
    max_feasible_k,
    mst,
    pairwise_distances,
    read_edge_list,
    write_edge_list,
)

LINE = np.array([[0.0], [1.0], [2.0], [3.0]])


def weight(graph, dist):
    return float(sum(dist.values[i, j] for i, j in graph.edges))


def test_line_distance():
    assert pairwise_distances(np.array([[0.0], [3.0]])).values[0, 1] == 3.0


def test_identical_observations_give_zero_matrix():
    assert not pairwise_distances(np.ones((4, 3))).values.any()


@pytest.mark.parametrize("metric", ["L2", "L1"])
def test_distances_match_naive_loop(rng, metric):
    x = rng.standard_normal((5, 3))
    d = pairwise_distances(SeriesTensor(x), metric).values
    order = 2 if metric == "L2" else 1
    naive = np.array([[np.linalg.norm(a - b, ord=order) for b in x] for a in x])
    assert np.allclose(d, naive, atol=1e-12, rtol=0)


def test_callable_metric(rng):
    x = rng.standard_normal((4, 2))
    d = pairwise_distances(x, lambda a, b: float(np.max(np.abs(a - b))))
    assert d.metric_tag == "user"
    assert np.isclose(d.values[0, 1], np.max(np.abs(x[0] - x[1])))


def test_distance_matrix_validation():
    with pytest.raises(ValidationError):
        DistanceMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValidationError):
        DistanceMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


def test_mst_on_line_is_the_chain():
    assert mst(pairwise_distances(LINE)).edge_set() == {(0, 1), (1, 2), (2, 3)}


def test_mst_two_nodes():
    assert mst(pairwise_distances(LINE[:2])).edge_set() == {(0, 1)}


def test_k1_equals_mst(rng):
    d = pairwise_distances(rng.standard_normal((9, 2)))
    assert np.array_equal(k_mst(d, 1).edges, mst(d).edges)


def test_second_tree_on_line():
    g = k_mst(pairwise_distances(LINE), 2)
    assert {tuple(e) for e in g.layer_edges(0)} == {(0, 1), (1, 2), (2, 3)}
    assert {tuple(e) for e in g.layer_edges(1)} == {(0, 2), (1, 3), (0, 3)}


def test_infeasible_k_names_the_limit():
    with pytest.raises(ValidationError, match="maximum feasible k is 1"):
        k_mst(pairwise_distances(LINE[:3]), 2)
    assert max_feasible_k(100) == 50


def test_forest_layer_warns():
    # K4 split greedily: the chain leaves a triangle-free remainder here.
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    d = pairwise_distances(pts)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g = k_mst(d, 2)
    layers = [g.layer_edges(i) for i in range(2)]
    if len(layers[1]) < 3:
        assert any(issubclass(w.category, GraphWarning) for w in caught)
        assert g.notes


def test_knn_on_line():
    assert knn_graph(pairwise_distances(LINE), 1).edge_set() == {(0, 1), (1, 2), (2, 3)}


def test_knn_complete_graph(rng):
    d = pairwise_distances(rng.standard_normal((6, 2)))
    assert knn_graph(d, 5).num_edges == 15


def test_knn_ties_prefer_lower_index():
    pts = np.array([[0.0], [1.0], [-1.0]])
    g = knn_graph(pairwise_distances(pts), 1)
    # Node 0 is equidistant from 1 and 2 and picks 1.
    assert (0, 1) in g.edge_set()


def test_graph_validation():
    with pytest.raises(ValidationError):
        SimilarityGraph(3, np.array([[0, 0]]))
    with pytest.raises(ValidationError):
        SimilarityGraph(3, np.array([[0, 1], [1, 0]]))
    with pytest.raises(ValidationError):
        SimilarityGraph(3, np.array([[0, 3]]))


def test_edge_list_round_trip(tmp_path, rng):
    g = k_mst(pairwise_distances(rng.standard_normal((10, 2))), 2)
    write_edge_list(g, tmp_path / "g.txt")
    assert read_edge_list(tmp_path / "g.txt", 10).edge_set() == g.edge_set()


def _random_spanning_tree(n, rng):
    # Random Pruefer-free construction: attach each node to an earlier one.
    order = rng.permutation(n)
    return [(min(order[i], order[j]), max(order[i], order[j]))
            for i in range(1, n) for j in [int(rng.integers(0, i))]]


points = st.integers(3, 14).flatmap(
    lambda n: st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=n, max_size=n)
)


@given(points, st.integers(0, 2**32 - 1))
def test_mst_not_heavier_than_random_trees(pts, seed):
    x = np.array(pts)
    d = pairwise_distances(x)
    w = weight(mst(d), d)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        tree = _random_spanning_tree(len(x), rng)
        assert w <= sum(d.values[i, j] for i, j in tree) + 1e-9


@given(points, st.integers(1, 3))
def test_kmst_layers_disjoint_and_degrees_consistent(pts, k):
    x = np.array(pts)
    k = min(k, len(x) // 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GraphWarning)
        g = k_mst(pairwise_distances(x), k)
    assert g.degree.sum() == 2 * g.num_edges
    seen = set()
    for i in range(k):
        layer = {tuple(e) for e in g.layer_edges(i)}
        assert not layer & seen
        seen |= layer
    assert len(seen) == g.num_edges


@given(points)
def test_later_layers_are_msts_of_the_remainder(pts):
    x = np.array(pts)
    n = len(x)
    if n < 6:
        return
    d = pairwise_distances(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GraphWarning)
        g = k_mst(d, 3)
    # Removing layer 1 and solving again gives layers 2.. unchanged.
    masked = d.values.copy()
    for i, j in g.layer_edges(0):
        masked[i, j] = masked[j, i] = np.inf
    pairs = sorted(((masked[i, j], i, j) for i, j in itertools.combinations(range(n), 2)
                    if np.isfinite(masked[i, j])))
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    second = set()
    for _, i, j in pairs:
        a, b = find(i), find(j)
        if a != b:
            parent[a] = b
            second.add((i, j))
    assert second == {tuple(e) for e in g.layer_edges(1)}


@given(points, st.floats(-100, 100), st.floats(-100, 100))
def test_graph_translation_invariant(pts, a, b):
    x = np.array(pts)
    d1 = pairwise_distances(x)
    d2 = pairwise_distances(x + np.array([a, b]))
    # Tiny rounding differences could reorder near-ties; only compare when
    # the translated distances agree exactly.
    if np.array_equal(d1.values, d2.values):
        assert np.array_equal(mst(d1).edges, mst(d2).edges)
