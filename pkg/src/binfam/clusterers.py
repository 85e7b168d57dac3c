"""Hierarchical clustering back-ends: Neighbor Join, Louvain and K-means."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .features import BinaryFeatures
from .similarity import ThetaKind, theta

MODULARITY_TOL = 1e-9


@dataclass
class Dendrogram:
    """Rooted tree over ``n_leaves`` input items.

    Leaves are the integers ``0 .. n_leaves-1``; internal node ``n_leaves + k``
    has children ``internal[k]``. For a single item the root is the leaf itself.
    """

    n_leaves: int
    internal: list[list[int]] = field(default_factory=list)
    root: int = 0
    features: list[BinaryFeatures] | None = None

    def children(self, node: int) -> list[int]:
        if node < self.n_leaves:
            return []
        return self.internal[node - self.n_leaves]

    def is_leaf(self, node: int) -> bool:
        return node < self.n_leaves

    def add(self, children: list[int]) -> int:
        self.internal.append(list(children))
        return self.n_leaves + len(self.internal) - 1

    def leaves_under(self, node: int) -> list[int]:
        out = []
        stack = [node]
        while stack:
            v = stack.pop()
            if v < self.n_leaves:
                out.append(v)
            else:
                stack.extend(reversed(self.children(v)))
        return out

    def postorder(self) -> list[int]:
        order = []
        stack = [(self.root, False)]
        while stack:
            v, done = stack.pop()
            if done or v < self.n_leaves:
                order.append(v)
                continue
            stack.append((v, True))
            for c in reversed(self.children(v)):
                stack.append((c, False))
        return order

    def attach_features(self, item_features: Sequence[BinaryFeatures], kind: ThetaKind) -> None:
        feats: dict[int, BinaryFeatures] = {i: f for i, f in enumerate(item_features)}
        for v in self.postorder():
            if v >= self.n_leaves:
                feats[v] = theta(kind, [feats[c] for c in self.children(v)])
        self.features = [feats[i] for i in range(self.n_leaves + len(self.internal))]

    def validate(self) -> None:
        seen = self.leaves_under(self.root)
        if sorted(seen) != list(range(self.n_leaves)):
            raise ValueError("dendrogram leaves must be exactly the inputs, each once")


def check_distance_matrix(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(d, d.T, atol=1e-12, rtol=0.0):
        raise ValueError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(d)) > 1e-12):
        raise ValueError("distance matrix must have a zero diagonal")
    return d


def neighbor_join(
    d: np.ndarray,
    item_features: Sequence[BinaryFeatures] | None = None,
    theta_kind: ThetaKind | None = None,
) -> Dendrogram:
    """Saitou-Nei neighbor joining; the final three-way join is the root.

    Ties in the Q-matrix go to the lowest (row, column) pair.
    """
    d = check_distance_matrix(d)
    n = d.shape[0]
    if n == 0:
        raise ValueError("neighbor_join needs at least one item")
    dend = Dendrogram(n_leaves=n)
    if n == 1:
        dend.root = 0
    elif n == 2:
        dend.root = dend.add([0, 1])
    else:
        dist = d.copy()
        nodes = list(range(n))
        big = np.inf
        while len(nodes) > 3:
            m = len(nodes)
            r = dist.sum(axis=1)
            q = (m - 2) * dist - r[:, None] - r[None, :]
            np.fill_diagonal(q, big)
            flat = int(np.argmin(q))
            i, j = divmod(flat, m)
            if i > j:
                i, j = j, i
            new = dend.add([nodes[i], nodes[j]])
            row = 0.5 * (dist[i] + dist[j] - dist[i, j])
            dist[i, :] = row
            dist[:, i] = row
            dist[i, i] = 0.0
            nodes[i] = new
            last = m - 1
            if j != last:
                dist[j, :] = dist[last, :]
                dist[:, j] = dist[:, last]
                nodes[j] = nodes[last]
            nodes.pop()
            dist = dist[:last, :last]
        dend.root = dend.add(sorted(nodes))
    if item_features is not None:
        dend.attach_features(item_features, theta_kind or ThetaKind.WEIGHTED_AVERAGE)
    return dend


# --------------------------------------------------------------------------- modularity / louvain


Graph = dict[int, dict[int, float]]


def build_graph(n: int, edges: Iterable[tuple[int, int, float]]) -> Graph:
    """Symmetric adjacency in matrix convention (a self loop ``i-i`` of weight w sets A[i][i] = 2w)."""
    g: Graph = {i: {} for i in range(n)}
    for u, v, w in edges:
        if w < 0:
            raise ValueError("edge weights must be non-negative")
        if w == 0:
            continue
        if u == v:
            g[u][u] = g[u].get(u, 0.0) + 2.0 * w
        else:
            g[u][v] = g[u].get(v, 0.0) + w
            g[v][u] = g[v].get(u, 0.0) + w
    return g


def modularity(graph: Graph, partition: Sequence[int]) -> float:
    """Weighted Newman modularity of ``partition`` (community label per node)."""
    two_m = sum(sum(nbrs.values()) for nbrs in graph.values())
    if two_m == 0:
        return 0.0
    internal: dict[int, float] = defaultdict(float)
    tot: dict[int, float] = defaultdict(float)
    for u, nbrs in graph.items():
        cu = partition[u]
        tot[cu] += sum(nbrs.values())
        for v, w in nbrs.items():
            if partition[v] == cu:
                internal[cu] += w
    return sum(internal[c] / two_m - (tot[c] / two_m) ** 2 for c in tot)


def _one_level(graph: Graph) -> list[int]:
    """Local-moving phase over nodes in sorted order; returns a community label per node."""
    nodes = sorted(graph)
    comm = {u: u for u in nodes}
    degree = {u: sum(graph[u].values()) for u in nodes}
    two_m = sum(degree.values())
    tot = dict(degree)
    if two_m == 0:
        return [comm[u] for u in nodes]
    improved = True
    while improved:
        improved = False
        for u in nodes:
            cu = comm[u]
            links: dict[int, float] = defaultdict(float)
            for v, w in graph[u].items():
                if v != u:
                    links[comm[v]] += w
            k_u = degree[u]
            tot[cu] -= k_u
            best_c = cu
            best_gain = links.get(cu, 0.0) - tot[cu] * k_u / two_m
            for c in sorted(links):
                gain = links[c] - tot[c] * k_u / two_m
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            tot[best_c] += k_u
            if best_c != cu:
                comm[u] = best_c
                improved = True
    relabel: dict[int, int] = {}
    for u in nodes:
        relabel.setdefault(comm[u], len(relabel))
    return [relabel[comm[u]] for u in nodes]


def _aggregate(graph: Graph, labels: list[int]) -> Graph:
    k = max(labels) + 1
    g: Graph = {c: {} for c in range(k)}
    for u, nbrs in graph.items():
        cu = labels[u]
        for v, w in nbrs.items():
            cv = labels[v]
            g[cu][cv] = g[cu].get(cv, 0.0) + w
    return g


@dataclass
class LouvainResult:
    levels: list[list[int]]
    dendrogram: Dendrogram
    modularities: list[float]

    @property
    def labels(self) -> list[int]:
        """Community of each item after the last pass."""
        if not self.levels:
            return list(range(self.dendrogram.n_leaves))
        return self.levels[-1]


def louvain(n: int, edges: Iterable[tuple[int, int, float]]) -> LouvainResult:
    """Louvain modularity clustering over items ``0..n-1``.

    Passes stop once a pass improves modularity by less than ``MODULARITY_TOL``.
    Each pass becomes one dendrogram level; single-member communities do not
    create nodes.
    """
    if n < 1:
        raise ValueError("louvain needs at least one item")
    graph = build_graph(n, edges)
    item_labels = list(range(n))
    current_q = modularity(graph, item_labels)
    levels: list[list[int]] = []
    qs = [current_q]
    g = graph
    dend = Dendrogram(n_leaves=n)
    level_nodes = list(range(n))  # dendrogram node representing each node of g
    while True:
        labels = _one_level(g)
        new_item_labels = [labels[c] for c in item_labels]
        q = modularity(graph, new_item_labels)
        if max(labels) + 1 == len(g) or q - current_q < MODULARITY_TOL:
            break
        members: dict[int, list[int]] = defaultdict(list)
        for node, c in enumerate(labels):
            members[c].append(node)
        next_nodes = []
        for c in range(max(labels) + 1):
            kids = [level_nodes[x] for x in members[c]]
            next_nodes.append(kids[0] if len(kids) == 1 else dend.add(kids))
        level_nodes = next_nodes
        item_labels = new_item_labels
        levels.append(list(item_labels))
        qs.append(q)
        current_q = q
        g = _aggregate(g, labels)
    if len(level_nodes) == 1:
        dend.root = level_nodes[0]
    else:
        dend.root = dend.add(level_nodes)
    return LouvainResult(levels=levels, dendrogram=dend, modularities=qs)


def louvain_from_distances(
    d: np.ndarray,
    prune_below: float = 0.05,
    item_features: Sequence[BinaryFeatures] | None = None,
    theta_kind: ThetaKind | None = None,
) -> Dendrogram:
    """Louvain over the similarity graph ``1 - d`` with weak edges pruned."""
    d = check_distance_matrix(d)
    n = d.shape[0]
    sim = 1.0 - d
    iu, ju = np.triu_indices(n, k=1)
    w = sim[iu, ju]
    keep = w >= prune_below
    edges = zip(iu[keep].tolist(), ju[keep].tolist(), w[keep].tolist())
    dend = louvain(n, edges).dendrogram
    if item_features is not None:
        dend.attach_features(item_features, theta_kind or ThetaKind.WEIGHTED_AVERAGE)
    return dend


# --------------------------------------------------------------------------- k-means


def kmeans(points: np.ndarray, k: int, max_iter: int = 100, seed: int = 0) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; empty clusters are dropped.

    Returns labels renumbered ``0..k'-1`` in order of first appearance.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(x)
    k = min(k, n)
    rng = np.random.default_rng(seed)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            break
        idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    c = np.array(centers)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        used = np.unique(labels)
        c = np.array([x[labels == j].mean(axis=0) for j in used])
        labels = np.searchsorted(used, labels)
    _, first = np.unique(labels, return_index=True)
    order = {lab: i for i, lab in enumerate(labels[np.sort(first)])}
    return np.array([order[lab] for lab in labels])
