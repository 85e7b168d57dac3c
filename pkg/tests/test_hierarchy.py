import json

import numpy as np
import pytest

from binfam.clusterers import Dendrogram
from binfam.evaluation import adjusted_rand_index
from binfam.features import BinaryFeatures, build_features
from binfam.hierarchy import (
    Hierarchy,
    HierarchyError,
    HierarchyParams,
    UpdateReport,
    batches,
    cohesion,
    flatten,
)
from binfam.similarity import ThetaKind, combined_distance, theta
from binfam.synthetic import generate_planted_corpus


def token_features(tokens, size=1):
    bag = {t: 1.0 for t in tokens}
    return BinaryFeatures.from_bags([dict(bag) for _ in range(4)] + [dict(bag), {}], size)


def chain_hierarchy(params, depth):
    """root -> n1 -> ... -> leaf exemplar holding one binary; returns (h, node ids top-down)."""
    h = Hierarchy(params)
    f = token_features(["a", "b"])
    h.binaries["b0"] = f
    ids = []
    parent = None
    for _ in range(depth):
        node = h._new_node(f, parent)
        if parent is not None:
            h.nodes[parent].children.append(node.id)
        else:
            h.root = node.id
        parent = node.id
        ids.append(node.id)
    h.nodes[parent].binaries.append("b0")
    h.binary_parent["b0"] = parent
    h.validate()
    return h, ids


def planted(n_fam=4, per=15, rate=0.1, seed=0):
    recs, truth = generate_planted_corpus(n_fam, per, rate, seed=seed)
    return [(r.binary_id, build_features(r)) for r in recs], truth


# ---------------------------------------------------------------------------- params


def test_params_validation_and_json_round_trip():
    with pytest.raises(ValueError):
        HierarchyParams(d_r=1)
    with pytest.raises(ValueError):
        HierarchyParams(tau=1.5)
    with pytest.raises(ValueError):
        HierarchyParams(lam=0)
    with pytest.raises(ValueError):
        HierarchyParams(clusterer="upgma")
    p = HierarchyParams(d_r=6, theta_kind="intersect", clusterer="louvain")
    assert HierarchyParams.from_json(json.loads(json.dumps(p.to_json()))) == p


# ---------------------------------------------------------------------------- classify


def test_classify_identical_binary_goes_to_its_exemplar():
    h = Hierarchy(HierarchyParams(clusterer="louvain"))
    h.bootstrap([("x1", token_features("abc")), ("x2", token_features("abc")), ("y1", token_features("xyz")), ("y2", token_features("xyz"))])
    target = h.binary_parent["x1"]
    assert h.classify_batch([("x3", token_features("abc"))]) == [target]
    assert combined_distance(h.nodes[target].features, token_features("abc")) == 0.0
    assert h.nodes[target].modified


def test_classify_tie_goes_to_lowest_id():
    h = Hierarchy(HierarchyParams(clusterer="louvain"))
    h.bootstrap([("x1", token_features("ab")), ("x2", token_features("ab")), ("y1", token_features("cd")), ("y2", token_features("cd"))])
    leaves = h.leaf_exemplars()
    assert len(leaves) == 2
    # equidistant to both families
    assert h.classify_batch([("z", token_features("ac"))]) == [min(leaves)]


def test_classify_empty_batch_is_noop():
    h, _ = chain_hierarchy(HierarchyParams(), 2)
    before = h.dumps()
    assert h.classify_batch([]) == []
    assert h.dumps() == before


def test_classify_requires_a_leaf_and_fresh_ids():
    with pytest.raises(HierarchyError):
        Hierarchy().classify_batch([("a", token_features("a"))])
    h, _ = chain_hierarchy(HierarchyParams(), 2)
    with pytest.raises(HierarchyError):
        h.classify_batch([("b0", token_features("a"))])


def test_planted_binaries_land_in_their_family():
    feats, truth = planted(n_fam=5, per=40, seed=3)
    h = Hierarchy(HierarchyParams(clusterer="louvain"))
    h.bootstrap(feats[:100])
    fam_of_leaf = {}
    for bid, leaf in h.families().items():
        fam_of_leaf.setdefault(leaf, []).append(truth[bid])
    majority = {leaf: max(set(v), key=v.count) for leaf, v in fam_of_leaf.items()}
    assigned = h.classify_batch(feats[100:])
    hits = [majority[leaf] == truth[bid] for (bid, _), leaf in zip(feats[100:], assigned)]
    assert np.mean(hits) >= 0.95


# ---------------------------------------------------------------------------- update pass


def test_update_pass_without_modifications_changes_nothing():
    feats, _ = planted()
    h = Hierarchy()
    h.bootstrap(feats)
    before = h.dumps()
    rep = h.update_pass()
    assert (rep.nodes_updated, rep.nodes_reclustered) == (0, 0)
    assert h.dumps() == before


def test_tau_one_never_reclusters():
    feats, _ = planted()
    h = Hierarchy(HierarchyParams(tau=1.0))
    h.bootstrap(feats[:-1])
    bid, f = feats[-1]
    rep = h.incremental_cluster([(bid, f)])
    assert rep.nodes_updated >= 1
    assert rep.nodes_reclustered == 0
    h.validate()


@pytest.mark.parametrize("d_r", [2, 3, 4])
def test_tau_zero_marks_exact_ancestor(monkeypatch, d_r):
    h, ids = chain_hierarchy(HierarchyParams(d_r=d_r, tau=0.0), 4)
    leaf = ids[-1]
    calls = []
    monkeypatch.setattr(Hierarchy, "recluster_at", lambda self, nid, report=None: calls.append(nid) or report)
    h.classify_batch([("new", token_features(["q"]))])
    h.update_pass()
    # every modified node drifts, so the marks are the (d_r-1)-ancestors of the whole path
    expected = sorted({h.ancestor(n, d_r - 1) for n in ids})
    assert sorted(set(calls)) == expected
    assert h.ancestor(leaf, d_r - 1) == ids[-d_r]


def test_ancestor_clamps_at_root():
    h, ids = chain_hierarchy(HierarchyParams(), 3)
    assert h.ancestor(ids[-1], 10) == ids[0]
    assert h.ancestor(ids[-1], 0) == ids[-1]


def test_update_pass_clears_flags():
    feats, _ = planted()
    h = Hierarchy(HierarchyParams(tau=0.0, d_r=2))
    h.bootstrap(feats[:40])
    h.incremental_cluster(feats[40:])
    assert not any(n.modified or n.needs_recluster for n in h.nodes.values())
    h.validate()


# ---------------------------------------------------------------------------- recluster


def test_recluster_unknown_node():
    h, _ = chain_hierarchy(HierarchyParams(), 2)
    with pytest.raises(HierarchyError):
        h.recluster_at(999)


def test_recluster_single_item_collapses_chain():
    h, ids = chain_hierarchy(HierarchyParams(d_r=4), 4)
    before = h.nodes[ids[0]].features
    h.recluster_at(ids[0])
    h.validate()
    assert combined_distance(before, h.nodes[ids[0]].features) == 0.0
    assert h.binary_parent["b0"] == ids[0] or h.nodes[h.binary_parent["b0"]].parent == ids[0]


def test_recluster_keeps_node_features_and_separates_groups():
    p = HierarchyParams(d_r=2, clusterer="louvain")
    h = Hierarchy(p)
    root = h._new_node(token_features("z"), None)
    h.root = root.id
    fam = h._new_node(token_features("z"), root.id)
    root.children = [fam.id]
    group_a = [(f"a{i}", token_features("abcdef" + str(i))) for i in range(4)]
    group_b = [(f"b{i}", token_features("uvwxyz" + str(i))) for i in range(4)]
    for bid, f in group_a + group_b:
        h.binaries[bid] = f
        fam.binaries.append(bid)
        h.binary_parent[bid] = fam.id
    fam.features = fam.original = theta(p.theta_kind, [f for _, f in group_a + group_b])
    root.features = root.original = fam.features
    before = root.features
    h.recluster_at(root.id)
    h.validate()
    assert combined_distance(before, h.nodes[root.id].features) == 0.0
    leaf = h.families()
    assert len({leaf[b] for b, _ in group_a}) == 1
    assert len({leaf[b] for b, _ in group_b}) == 1
    assert leaf["a0"] != leaf["b0"]


# ---------------------------------------------------------------------------- flatten


def _matrix_dist(m):
    return lambda idx: m[np.ix_(list(idx), list(idx))]


def _three_level():
    # leaves 0..3, internal 4 = (0, 1), 5 = (2, 3), root 6 = (4, 5)
    dend = Dendrogram(n_leaves=4, internal=[[0, 1], [2, 3], [4, 5]], root=6)
    return dend


def test_cohesion():
    m = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    assert cohesion([0, 1, 2], _matrix_dist(m)) == pytest.approx(2.0)
    assert cohesion([0], _matrix_dist(m)) == 0.0


def test_flatten_infinite_lambda_keeps_structure():
    m = np.ones((7, 7)) - np.eye(7)
    out = flatten(_three_level(), 1e18, _matrix_dist(m))
    assert len(out.internal) == 3


def test_flatten_zero_lambda_collapses_everything():
    m = np.ones((7, 7)) - np.eye(7)
    out = flatten(_three_level(), 0.0, _matrix_dist(m))
    assert out.internal == [[0, 1, 2, 3]]


def test_flatten_identical_leaves_fully_flattened():
    m = np.zeros((7, 7))
    out = flatten(_three_level(), 1.5, _matrix_dist(m))
    assert out.internal == [[0, 1, 2, 3]]


def test_flatten_condition_is_literal():
    # children (4, 5) at distance 1; grandchildren 0..3 with mean pairwise distance 0.5
    m = np.zeros((7, 7))
    m[4, 5] = m[5, 4] = 1.0
    for a, b in [(0, 1), (2, 3)]:
        m[a, b] = m[b, a] = 0.25
    for a in (0, 1):
        for b in (2, 3):
            m[a, b] = m[b, a] = 0.625
    c2 = cohesion([0, 1, 2, 3], _matrix_dist(m))
    assert c2 == pytest.approx(0.5)
    assert len(flatten(_three_level(), 1.9, _matrix_dist(m)).internal) == 1
    assert len(flatten(_three_level(), 2.1, _matrix_dist(m)).internal) == 3


def test_flatten_skips_nodes_with_one_grandchild():
    dend = Dendrogram(n_leaves=3, internal=[[0], [3, 1, 2]], root=4)
    m = np.zeros((5, 5))
    out = flatten(dend, 0.0, _matrix_dist(m))
    assert len(out.internal) == 2
    assert sorted(len(c) for c in out.internal) == [1, 3]


# ---------------------------------------------------------------------------- whole runs and persistence


def test_incremental_bootstrap_on_empty_hierarchy():
    feats, _ = planted()
    h = Hierarchy()
    rep = h.incremental_cluster(feats)
    assert rep.bootstrap and rep.assigned == len(feats)
    h.validate()
    assert len(h) == len(feats)


def test_single_batch_louvain_recovers_planted_families():
    feats, truth = planted(n_fam=6, per=20, seed=2)
    h = Hierarchy(HierarchyParams(clusterer="louvain"))
    h.incremental_cluster(feats)
    assert adjusted_rand_index(h.families(), truth) >= 0.9


def test_resubmitting_copies_with_tau_one_keeps_structure():
    feats, _ = planted()
    h = Hierarchy(HierarchyParams(tau=1.0))
    h.incremental_cluster(feats)
    shape = {nid: (n.parent, tuple(n.children)) for nid, n in h.nodes.items()}
    h.incremental_cluster([(bid + "-copy", f) for bid, f in feats])
    assert {nid: (n.parent, tuple(n.children)) for nid, n in h.nodes.items()} == shape
    assert len(h) == 2 * len(feats)


@pytest.mark.parametrize("kind", ["avg", "intersect"])
def test_save_load_round_trip_is_byte_identical(kind):
    feats, _ = planted()
    h = Hierarchy(HierarchyParams(theta_kind=kind, d_r=2))
    for chunk in batches(feats, 20):
        h.incremental_cluster(list(chunk))
    text = h.dumps()
    again = Hierarchy.loads(text)
    again.validate()
    assert again.dumps() == text


def test_two_runs_identical_files():
    feats, _ = planted()
    runs = []
    for _ in range(2):
        h = Hierarchy(HierarchyParams(d_r=2))
        for chunk in batches(feats, 15):
            h.incremental_cluster(list(chunk))
        runs.append(h.dumps())
    assert runs[0] == runs[1]


def test_loads_rejects_wrong_format():
    with pytest.raises(HierarchyError):
        Hierarchy.loads(json.dumps({"format": "other", "version": 1}))


def test_validate_catches_broken_parent_pointer():
    h, ids = chain_hierarchy(HierarchyParams(), 3)
    h.nodes[ids[1]].parent = ids[2]
    with pytest.raises(HierarchyError):
        h.validate()


def test_batches_helper():
    assert [list(b) for b in batches([1, 2, 3, 4, 5], 2)] == [[1, 2], [3, 4], [5]]
    assert [list(b) for b in batches([1, 2], 10)] == [[1, 2]]


def test_update_report_json_excludes_timing():
    assert "cluster_seconds" not in UpdateReport(cluster_seconds=1.0).to_json()
