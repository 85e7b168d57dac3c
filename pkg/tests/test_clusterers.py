import itertools

import networkx as nx
import numpy as np
import pytest
from networkx.algorithms.community import modularity as nx_modularity

from binfam.clusterers import (
    build_graph,
    check_distance_matrix,
    kmeans,
    louvain,
    louvain_from_distances,
    modularity,
    neighbor_join,
)


def random_additive_tree(n, rng):
    """Random unrooted binary tree on leaves 0..n-1 with positive edge lengths.

    Returns the leaf distance matrix and the set of non-trivial splits.
    """
    g = nx.Graph()
    g.add_edge(0, 1, w=rng.uniform(0.5, 2.0))
    nxt = n
    for leaf in range(2, n):
        u, v = list(g.edges)[rng.integers(g.number_of_edges())]
        g.remove_edge(u, v)
        mid = nxt
        nxt += 1
        for a in (u, v, leaf):
            g.add_edge(mid, a, w=rng.uniform(0.5, 2.0))
    lengths = dict(nx.all_pairs_dijkstra_path_length(g, weight="w"))
    d = np.array([[lengths[i][j] for j in range(n)] for i in range(n)])
    return d, tree_splits(g, n)


def tree_splits(g, n):
    splits = set()
    for u, v in g.edges:
        h = g.copy()
        h.remove_edge(u, v)
        side = {x for x in nx.node_connected_component(h, u) if x < n}
        if 1 < len(side) < n - 1:
            splits.add(frozenset(side) if 0 not in side else frozenset(set(range(n)) - side))
    return splits


def dendrogram_splits(dend):
    n = dend.n_leaves
    splits = set()
    for node in range(n, n + len(dend.internal)):
        if node == dend.root:
            continue
        side = set(dend.leaves_under(node))
        if 1 < len(side) < n - 1:
            splits.add(frozenset(side) if 0 not in side else frozenset(set(range(n)) - side))
    return splits


def test_nj_single_and_pair():
    d1 = neighbor_join(np.zeros((1, 1)))
    assert d1.n_leaves == 1 and d1.root == 0
    d2 = neighbor_join(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert sorted(d2.children(d2.root)) == [0, 1]


def test_nj_four_point_topology():
    # ((0,1),(2,3)) with unequal branch lengths
    d = np.array(
        [
            [0, 3, 7, 8],
            [3, 0, 6, 7],
            [7, 6, 0, 3],
            [8, 7, 3, 0],
        ],
        dtype=float,
    )
    assert dendrogram_splits(neighbor_join(d)) == {frozenset({2, 3})}


@pytest.mark.parametrize("n", [4, 5, 6, 7, 8])
def test_nj_exact_on_additive_metrics(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        d, splits = random_additive_tree(n, rng)
        dend = neighbor_join(d)
        dend.validate()
        assert dendrogram_splits(dend) == splits


def test_nj_rejects_asymmetric():
    with pytest.raises(ValueError):
        neighbor_join(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        check_distance_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


def _two_triangles(bridge=0.1):
    edges = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, bridge)]
    return edges


def test_louvain_two_cliques_matches_exhaustive_best():
    edges = _two_triangles()
    g = build_graph(6, edges)
    best = max(
        (modularity(g, labels), labels)
        for labels in itertools.product(range(6), repeat=6)
        if labels[0] == 0
    )
    res = louvain(6, edges)
    assert modularity(g, res.labels) == pytest.approx(best[0])
    assert res.labels[0] == res.labels[1] == res.labels[2] != res.labels[3] == res.labels[4] == res.labels[5]


def test_louvain_trivial_graphs():
    assert len(set(louvain(4, []).labels)) == 4
    assert louvain(1, []).labels == [0]


def test_louvain_never_decreases_modularity():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = 20
        edges = [(i, j, float(rng.random())) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.2]
        res = louvain(n, edges)
        g = build_graph(n, edges)
        assert all(b >= a - 1e-12 for a, b in zip(res.modularities, res.modularities[1:]))
        assert modularity(g, res.labels) >= modularity(g, list(range(n))) - 1e-12


def test_modularity_matches_networkx():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = 12
        edges = [(i, j, float(rng.uniform(0.1, 2))) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
        if not edges:
            continue
        labels = rng.integers(3, size=n).tolist()
        g = nx.Graph()
        g.add_nodes_from(range(n))
        g.add_weighted_edges_from(edges)
        comms = [{i for i in range(n) if labels[i] == c} for c in set(labels)]
        assert modularity(build_graph(n, edges), labels) == pytest.approx(nx_modularity(g, comms, weight="weight"))


def test_modularity_closed_forms():
    assert modularity(build_graph(3, []), [0, 0, 0]) == 0.0
    # two disjoint equal cliques split perfectly
    edges = [(a, b, 1.0) for a, b in itertools.combinations(range(4), 2)]
    edges += [(a + 4, b + 4, 1.0) for a, b in itertools.combinations(range(4), 2)]
    assert modularity(build_graph(8, edges), [0] * 4 + [1] * 4) == pytest.approx(0.5)


def test_louvain_dendrogram_covers_items():
    d = np.array([[0, 0.1, 0.9, 0.9], [0.1, 0, 0.9, 0.9], [0.9, 0.9, 0, 0.1], [0.9, 0.9, 0.1, 0]])
    dend = louvain_from_distances(d)
    dend.validate()
    assert sorted(dend.leaves_under(dend.root)) == [0, 1, 2, 3]


def test_kmeans_k1_and_pairs():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
    assert len(set(kmeans(pts, 1))) == 1
    lab = kmeans(pts, 2)
    assert lab[0] == lab[1] != lab[2] == lab[3]


def test_kmeans_clamps_k():
    assert len(set(kmeans(np.eye(3), 10))) <= 3


def _wcss(pts, labels):
    return sum(((pts[labels == c] - pts[labels == c].mean(axis=0)) ** 2).sum() for c in set(labels.tolist()))


def test_kmeans_reaches_bruteforce_optimum_on_small_sets():
    rng = np.random.default_rng(5)
    for trial in range(10):
        pts = np.concatenate([rng.normal(0, 0.3, (4, 2)), rng.normal(3, 0.3, (4, 2))])
        best = min(
            _wcss(pts, np.array(assign))
            for assign in itertools.product([0, 1], repeat=len(pts))
            if 0 < sum(assign) < len(pts)
        )
        got = _wcss(pts, np.asarray(kmeans(pts, 2, seed=trial)))
        assert got <= best + 1e-9


def test_kmeans_deterministic():
    pts = np.random.default_rng(0).random((30, 3))
    assert list(kmeans(pts, 4, seed=1)) == list(kmeans(pts, 4, seed=1))
