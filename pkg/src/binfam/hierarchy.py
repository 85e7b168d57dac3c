"""Persistent exemplar hierarchy with online classification and local re-clustering.

Binaries are the leaves of the tree; every other node is an exemplar whose
features are ``theta`` of its children. Leaf exemplars (families) hold only
binaries. New binaries are attached to the closest leaf exemplar, then a
post-order pass refreshes exemplar features and re-clusters the region below
any exemplar whose descendants drifted by more than ``tau`` from their
original features.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .clusterers import Dendrogram, louvain_from_distances, neighbor_join
from .features import BinaryFeatures
from .similarity import ChannelWeights, ThetaKind, combined_distance, distance_matrix, theta

log = logging.getLogger(__name__)

FORMAT_NAME = "binfam-hierarchy"
FORMAT_VERSION = 1
CLUSTERERS = ("nj", "louvain")


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class HierarchyParams:
    d_r: int = 4
    tau: float = 0.15
    lam: float = 1.5
    theta_kind: ThetaKind = ThetaKind.WEIGHTED_AVERAGE
    channel_weights: ChannelWeights = field(default_factory=ChannelWeights)
    clusterer: str = "nj"
    louvain_prune: float = 0.05

    def __post_init__(self):
        if self.d_r < 2:
            raise ValueError("d_r must be >= 2")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.clusterer not in CLUSTERERS:
            raise ValueError(f"clusterer must be one of {CLUSTERERS}")
        object.__setattr__(self, "theta_kind", ThetaKind(self.theta_kind))

    def to_json(self) -> dict:
        return {
            "d_r": self.d_r,
            "tau": self.tau,
            "lambda": self.lam,
            "theta": self.theta_kind.value,
            "channel_weights": self.channel_weights.to_json(),
            "clusterer": self.clusterer,
            "louvain_prune": self.louvain_prune,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HierarchyParams":
        cw = obj["channel_weights"]
        return cls(
            d_r=obj["d_r"],
            tau=obj["tau"],
            lam=obj["lambda"],
            theta_kind=ThetaKind(obj["theta"]),
            channel_weights=ChannelWeights(cw["ngram"], cw["string"], cw["imports"]),
            clusterer=obj["clusterer"],
            louvain_prune=obj["louvain_prune"],
        )


@dataclass
class ExemplarNode:
    id: int
    features: BinaryFeatures
    original: BinaryFeatures
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    binaries: list[str] = field(default_factory=list)
    modified: bool = False
    needs_recluster: bool = False

    @property
    def size(self) -> int:
        return self.features.size

    @property
    def is_leaf_exemplar(self) -> bool:
        return bool(self.binaries)


@dataclass
class UpdateReport:
    nodes_updated: int = 0
    nodes_reclustered: int = 0
    assigned: int = 0
    bootstrap: bool = False
    items_clustered: int = 0
    cluster_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "nodes_updated": self.nodes_updated,
            "nodes_reclustered": self.nodes_reclustered,
            "assigned": self.assigned,
            "bootstrap": self.bootstrap,
            "items_clustered": self.items_clustered,
        }


# An item handed to the clusterer: ("n", exemplar id) or ("b", binary id).
Item = tuple[str, object]


def cohesion(idx: Sequence[int], dist) -> float:
    """Mean pairwise distance among ``idx``; 0 for fewer than two members."""
    if len(idx) < 2:
        return 0.0
    m = dist(idx)
    k = len(idx)
    return float(m.sum() / (k * (k - 1)))


def flatten(dend: Dendrogram, lam: float, dist) -> Dendrogram:
    """Collapse levels bottom-up wherever ``lam * cohesion(grandchildren) < cohesion(children)``.

    ``dist(nodes)`` returns the pairwise distance matrix between dendrogram
    nodes. When both cohesions are 0 the level is collapsed as well. A node
    adopts the children of its internal children; leaf children stay put.
    Surviving node features are kept as they are.
    """
    kids = {v: list(dend.children(v)) for v in range(dend.n_leaves, dend.n_leaves + len(dend.internal))}
    for v in dend.postorder():
        if dend.is_leaf(v):
            continue
        current = kids[v]
        inner = [c for c in current if not dend.is_leaf(c)]
        grand = [g for c in inner for g in kids[c]]
        if len(grand) < 2:
            continue
        c1 = cohesion(current, dist)
        c2 = cohesion(grand, dist)
        if lam * c2 < c1 or (c1 == 0.0 and c2 == 0.0):
            merged: list[int] = []
            for c in current:
                merged.extend(kids[c] if not dend.is_leaf(c) else [c])
            kids[v] = merged
            for c in inner:
                del kids[c]
    # renumber surviving internal nodes
    out = Dendrogram(n_leaves=dend.n_leaves)
    feats = dict(enumerate(dend.features)) if dend.features is not None else None
    new_feats: dict[int, BinaryFeatures] = {}

    def build(v: int) -> int:
        if dend.is_leaf(v):
            if feats is not None:
                new_feats[v] = feats[v]
            return v
        nid = out.add([])
        out.internal[nid - out.n_leaves] = [build(c) for c in kids[v]]
        if feats is not None:
            new_feats[nid] = feats[v]
        return nid

    out.root = build(dend.root)
    if feats is not None:
        out.features = [new_feats[i] for i in range(out.n_leaves + len(out.internal))]
    return out


class Hierarchy:
    def __init__(self, params: HierarchyParams | None = None):
        self.params = params or HierarchyParams()
        self.nodes: dict[int, ExemplarNode] = {}
        self.root: int | None = None
        self.binaries: dict[str, BinaryFeatures] = {}
        self.binary_parent: dict[str, int] = {}
        self.next_id = 0

    # ------------------------------------------------------------------ queries

    def __len__(self) -> int:
        return len(self.binaries)

    def leaf_exemplars(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.binaries)

    def families(self) -> dict[str, int]:
        """Binary id -> leaf exemplar id."""
        return dict(self.binary_parent)

    def ancestor(self, node_id: int, k: int) -> int:
        """k-th ancestor of ``node_id``, clamped at the root."""
        cur = node_id
        for _ in range(k):
            parent = self.nodes[cur].parent
            if parent is None:
                break
            cur = parent
        return cur

    def depth_of(self, node_id: int) -> int:
        d = 0
        cur = self.nodes[node_id].parent
        while cur is not None:
            d += 1
            cur = self.nodes[cur].parent
        return d

    def max_depth(self) -> int:
        """Edges from the root to the deepest binary."""
        if self.root is None:
            return 0
        best = 0
        stack = [(self.root, 0)]
        while stack:
            nid, d = stack.pop()
            node = self.nodes[nid]
            if node.binaries:
                best = max(best, d + 1)
            stack.extend((c, d + 1) for c in node.children)
        return best

    def branching_factor(self) -> float:
        """Mean number of children (exemplars or binaries) per exemplar."""
        if not self.nodes:
            return 0.0
        return float(np.mean([len(n.children) + len(n.binaries) for n in self.nodes.values()]))

    def child_features(self, node: ExemplarNode) -> list[BinaryFeatures]:
        if node.binaries:
            return [self.binaries[b] for b in node.binaries]
        return [self.nodes[c].features for c in node.children]

    def postorder(self) -> list[int]:
        if self.root is None:
            return []
        order = []
        stack = [(self.root, False)]
        while stack:
            nid, done = stack.pop()
            if done:
                order.append(nid)
                continue
            stack.append((nid, True))
            for c in reversed(self.nodes[nid].children):
                stack.append((c, False))
        return order

    def distance(self, a: BinaryFeatures, b: BinaryFeatures) -> float:
        return combined_distance(a, b, self.params.channel_weights)

    # ------------------------------------------------------------------ mutation helpers

    def _new_node(self, features: BinaryFeatures, parent: int | None) -> ExemplarNode:
        node = ExemplarNode(id=self.next_id, features=features, original=features, parent=parent)
        self.nodes[node.id] = node
        self.next_id += 1
        return node

    def _cluster(self, feats: Sequence[BinaryFeatures], report: UpdateReport) -> tuple[Dendrogram, np.ndarray]:
        t0 = time.perf_counter()
        p = self.params
        d = distance_matrix(feats, cw=p.channel_weights)
        if p.clusterer == "nj":
            dend = neighbor_join(d, feats, p.theta_kind)
        else:
            dend = louvain_from_distances(d, p.louvain_prune, feats, p.theta_kind)
        cw = p.channel_weights
        cache: dict[tuple[int, int], float] = {}
        n = len(feats)

        def dist(idx: Sequence[int]) -> np.ndarray:
            idx = list(idx)
            if all(i < n for i in idx):
                return d[np.ix_(idx, idx)]
            m = np.zeros((len(idx), len(idx)))
            inner = [k for k, i in enumerate(idx) if i >= n]
            leaves = [k for k, i in enumerate(idx) if i < n]
            if leaves:
                li = [idx[k] for k in leaves]
                m[np.ix_(leaves, leaves)] = d[np.ix_(li, li)]
            for a in inner:
                for b in range(len(idx)):
                    if b == a or (b in inner and b < a):
                        continue
                    key = (min(idx[a], idx[b]), max(idx[a], idx[b]))
                    if key not in cache:
                        cache[key] = combined_distance(dend.features[key[0]], dend.features[key[1]], cw)
                    m[a, b] = m[b, a] = cache[key]
            return m

        flat = flatten(dend, p.lam, dist)
        report.items_clustered += n
        report.cluster_seconds += time.perf_counter() - t0
        return flat, d

    def _splice(self, frag: Dendrogram, items: Sequence[Item], root_node: ExemplarNode) -> None:
        """Install ``frag`` below ``root_node``; fragment leaves are ``items``."""

        def attach(node: ExemplarNode, frag_children: list[int]) -> None:
            bins = []
            exemplars = []
            for c in frag_children:
                if frag.is_leaf(c):
                    kind, ref = items[c]
                    if kind == "b":
                        bins.append(ref)
                    else:
                        exemplars.append(ref)
                else:
                    child = self._new_node(frag.features[c], node.id)
                    exemplars.append(child.id)
                    attach(child, frag.children(c))
            if bins and exemplars:
                # leaf exemplars may only hold binaries: group loose binaries into a family
                fam = self._new_node(theta(self.params.theta_kind, [self.binaries[b] for b in bins]), node.id)
                fam.binaries = bins
                for b in bins:
                    self.binary_parent[b] = fam.id
                exemplars.append(fam.id)
                bins = []
            node.children = exemplars
            node.binaries = bins
            for b in bins:
                self.binary_parent[b] = node.id
            for e in exemplars:
                self.nodes[e].parent = node.id

        if frag.is_leaf(frag.root):
            attach(root_node, [frag.root])
        else:
            attach(root_node, frag.children(frag.root))

    def _item_features(self, items: Sequence[Item]) -> list[BinaryFeatures]:
        return [self.nodes[ref].features if kind == "n" else self.binaries[ref] for kind, ref in items]

    # ------------------------------------------------------------------ algorithm

    def frontier(self, node_id: int, depth: int) -> tuple[list[Item], list[int]]:
        """Descendants of ``node_id`` at ``depth``, plus binaries met on shallower branches.

        Also returns the exemplars strictly between ``node_id`` and that frontier.
        """
        level: list[Item] = [("n", node_id)]
        between: list[int] = []
        for step in range(depth):
            nxt: list[Item] = []
            for kind, ref in level:
                if kind == "b":
                    nxt.append((kind, ref))
                    continue
                if step > 0:
                    between.append(ref)
                node = self.nodes[ref]
                nxt.extend(("n", c) for c in node.children)
                nxt.extend(("b", b) for b in node.binaries)
            level = nxt
        return level, between

    def bootstrap(self, batch: Sequence[tuple[str, BinaryFeatures]], report: UpdateReport | None = None) -> UpdateReport:
        report = report or UpdateReport()
        for bid, feats in batch:
            self.binaries[bid] = feats.with_size(1) if feats.size != 1 else feats
        items: list[Item] = [("b", bid) for bid, _ in batch]
        feats = self._item_features(items)
        frag, _ = self._cluster(feats, report)
        root_feats = frag.features[frag.root] if not frag.is_leaf(frag.root) else theta(self.params.theta_kind, feats)
        root = self._new_node(root_feats, None)
        self.root = root.id
        self._splice(frag, items, root)
        report.bootstrap = True
        report.assigned = len(batch)
        report.nodes_reclustered += 1
        return report

    def classify_batch(self, batch: Sequence[tuple[str, BinaryFeatures]]) -> list[int]:
        """Attach each binary under its nearest leaf exemplar (lowest id on ties)."""
        if not batch:
            return []
        leaves = self.leaf_exemplars()
        if not leaves:
            raise HierarchyError("hierarchy has no leaf exemplars; bootstrap it first")
        for bid, _ in batch:
            if bid in self.binaries:
                raise HierarchyError(f"binary {bid!r} is already in the hierarchy")
        d = distance_matrix([f for _, f in batch], [self.nodes[i].features for i in leaves], self.params.channel_weights)
        best = d.argmin(axis=1)
        assigned = []
        for (bid, feats), k in zip(batch, best):
            leaf = self.nodes[leaves[int(k)]]
            self.binaries[bid] = feats
            leaf.binaries.append(bid)
            self.binary_parent[bid] = leaf.id
            leaf.modified = True
            assigned.append(leaf.id)
        return assigned

    def recluster_at(self, node_id: int, report: UpdateReport | None = None) -> UpdateReport:
        """Rebuild the region between ``node_id`` and its descendants ``d_r`` levels down.

        The node keeps its own features; the exemplars in between are replaced by
        the clusterer's flattened sub-hierarchy.
        """
        report = report or UpdateReport()
        if node_id not in self.nodes:
            raise HierarchyError(f"unknown node {node_id}")
        node = self.nodes[node_id]
        items, between = self.frontier(node_id, self.params.d_r)
        for nid in between:
            del self.nodes[nid]
        if len(items) == 1:
            frag = Dendrogram(n_leaves=1, root=0, features=self._item_features(items))
        else:
            frag, _ = self._cluster(self._item_features(items), report)
        self._splice(frag, items, node)
        node.needs_recluster = False
        report.nodes_reclustered += 1
        return report

    def update_pass(self, report: UpdateReport | None = None) -> UpdateReport:
        report = report or UpdateReport()
        p = self.params
        for nid in self.postorder():
            node = self.nodes.get(nid)
            if node is None:
                continue
            if node.modified:
                if node.parent is not None:
                    self.nodes[node.parent].modified = True
                node.features = theta(p.theta_kind, self.child_features(node))
                report.nodes_updated += 1
                if self.distance(node.features, node.original) > p.tau:
                    self.nodes[self.ancestor(nid, p.d_r - 1)].needs_recluster = True
            if node.needs_recluster:
                self.recluster_at(nid, report)
        for node in self.nodes.values():
            node.modified = False
            node.needs_recluster = False
        return report

    def incremental_cluster(self, batch: Sequence[tuple[str, BinaryFeatures]]) -> UpdateReport:
        report = UpdateReport()
        if not batch:
            return report
        if self.root is None:
            return self.bootstrap(batch, report)
        report.assigned = len(self.classify_batch(batch))
        return self.update_pass(report)

    # ------------------------------------------------------------------ checks

    def validate(self) -> None:
        if self.root is None:
            if self.nodes or self.binaries:
                raise HierarchyError("empty hierarchy must have no nodes or binaries")
            return
        roots = [i for i, n in self.nodes.items() if n.parent is None]
        if roots != [self.root]:
            raise HierarchyError(f"expected single root {self.root}, found {roots}")
        seen_nodes: set[int] = set()
        seen_bins: set[str] = set()

        def walk(nid: int) -> int:
            if nid in seen_nodes:
                raise HierarchyError(f"cycle or shared node at {nid}")
            seen_nodes.add(nid)
            node = self.nodes[nid]
            if node.children and node.binaries:
                raise HierarchyError(f"leaf exemplar {nid} mixes binaries and exemplars")
            if not node.children and not node.binaries:
                raise HierarchyError(f"exemplar {nid} has no children")
            size = 0
            for c in node.children:
                if self.nodes[c].parent != nid:
                    raise HierarchyError(f"parent pointer of {c} is not {nid}")
                size += walk(c)
            for b in node.binaries:
                if b in seen_bins:
                    raise HierarchyError(f"binary {b} appears twice")
                if self.binary_parent.get(b) != nid:
                    raise HierarchyError(f"binary {b} parent pointer mismatch")
                seen_bins.add(b)
                size += 1
            if node.size != size:
                raise HierarchyError(f"exemplar {nid} has size {node.size}, subtree holds {size}")
            return size

        total = walk(self.root)
        if seen_nodes != set(self.nodes):
            raise HierarchyError("unreachable exemplars present")
        if seen_bins != set(self.binaries):
            raise HierarchyError("unreachable binaries present")
        if total != len(self.binaries):
            raise HierarchyError("root size does not match the binary table")

    # ------------------------------------------------------------------ persistence

    def to_json(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": self.params.to_json(),
            "root": self.root,
            "next_id": self.next_id,
            "nodes": [
                {
                    "id": n.id,
                    "parent": n.parent,
                    "children": n.children,
                    "binaries": n.binaries,
                    "features": n.features.to_json(),
                    "original_features": n.original.to_json(),
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "binaries": [
                {"id": b, "parent": self.binary_parent[b], "features": self.binaries[b].to_json()}
                for b in sorted(self.binaries)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "Hierarchy":
        if obj.get("format") != FORMAT_NAME:
            raise HierarchyError("not a hierarchy file")
        if obj.get("version") != FORMAT_VERSION:
            raise HierarchyError(f"unsupported hierarchy format version {obj.get('version')}")
        h = cls(HierarchyParams.from_json(obj["params"]))
        h.root = obj["root"]
        h.next_id = obj["next_id"]
        for n in obj["nodes"]:
            h.nodes[n["id"]] = ExemplarNode(
                id=n["id"],
                features=BinaryFeatures.from_json(n["features"]),
                original=BinaryFeatures.from_json(n["original_features"]),
                parent=n["parent"],
                children=list(n["children"]),
                binaries=list(n["binaries"]),
            )
        for b in obj["binaries"]:
            h.binaries[b["id"]] = BinaryFeatures.from_json(b["features"])
            h.binary_parent[b["id"]] = b["parent"]
        return h

    @classmethod
    def loads(cls, text: str) -> "Hierarchy":
        return cls.from_json(json.loads(text))


def batches(items: Sequence, size: int) -> Iterable[Sequence]:
    if size < 1:
        raise ValueError("batch size must be >= 1")
    for i in range(0, len(items), size):
        yield items[i : i + size]
