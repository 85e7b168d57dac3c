"""Ground-truth lineages for testing: random trees from Prüfer sequences."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..features import BinaryFeatures, RawBinaryRecord, build_features
from ..synthetic import CorpusShape, _prototype, mutate_record
from .model import LineageError, LineageGraph, TimeEvidence

T_MIN = 1
T_MAX = 10_000
DELAYS = ("geometric", "uniform")


def prufer_decode(seq: Sequence[int], n: int) -> list[tuple[int, int]]:
    """Undirected edges of the labelled tree on ``0..n-1`` encoded by ``seq``."""
    if n < 2:
        raise ValueError("a tree needs at least 2 nodes")
    if len(seq) != n - 2:
        raise ValueError(f"sequence of length {len(seq)} does not encode a tree on {n} nodes")
    if any(not 0 <= s < n for s in seq):
        raise ValueError("sequence labels out of range")
    degree = [1] * n
    for s in seq:
        degree[s] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for s in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, s))
        degree[s] -= 1
        if degree[s] == 1:
            heapq.heappush(leaves, s)
    u, v = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((u, v))
    return edges


@dataclass
class SyntheticLineage:
    truth: LineageGraph
    evidence: TimeEvidence
    features: dict[str, BinaryFeatures]
    records: list[RawBinaryRecord]


def generate_synthetic_lineage(
    n: int,
    seed: int = 0,
    obfuscation: float = 0.0,
    empty_frac: float = 0.5,
    delay: str = "geometric",
    mean_gap: float = 15.0,
    mean_delay: float = 50.0,
    mutation_rate: float = 0.1,
    shape: CorpusShape = CorpusShape(),
) -> SyntheticLineage:
    """Random tree lineage with times, noisy time evidence and mutated features.

    Each child copies its parent's record with ``mutation_rate`` of its tokens
    replaced, is created ``1 + Geometric`` units after the parent (mean
    ``mean_gap``) and is first seen a geometric or uniform delay later. A
    timestamp is obfuscated with probability ``obfuscation``; an obfuscated
    timestamp is empty with probability ``empty_frac`` and uniform otherwise.
    """
    if n < 2:
        raise LineageError("need >= 2 binaries for a lineage")
    if delay not in DELAYS:
        raise ValueError(f"delay must be one of {DELAYS}")
    for name, v in (("obfuscation", obfuscation), ("empty_frac", empty_frac), ("mutation_rate", mutation_rate)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    seq = rng.integers(n, size=n - 2).tolist()
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for a, b in prufer_decode(seq, n):
        adj[a].append(b)
        adj[b].append(a)
    root = int(rng.integers(n))
    ids = [f"lin{seed}-{i:03d}" for i in range(n)]

    # breadth-first orientation from the root
    parent = {root: None}
    order = [root]
    for v in order:
        for w in sorted(adj[v]):
            if w not in parent:
                parent[w] = v
                order.append(w)

    # gap - 1 is geometric on {0, 1, ...} with mean mean_gap - 1
    p_gap = 1.0 / mean_gap
    times: dict[int, int] = {}
    records: dict[int, RawBinaryRecord] = {}
    for v in order:
        if parent[v] is None:
            times[v] = 0
            records[v] = _prototype(rng, ids[v], shape)
        else:
            times[v] = times[parent[v]] + int(rng.geometric(p_gap))
            records[v] = mutate_record(records[parent[v]], ids[v], mutation_rate, rng)
    depth_span = max(times.values())
    offset = int(rng.integers(T_MIN, max(T_MIN + 1, T_MAX // 2 - depth_span)))
    times = {v: t + offset for v, t in times.items()}

    timestamps, first_seen = {}, {}
    for v in range(n):
        t = times[v]
        if delay == "geometric":
            d = int(rng.geometric(1.0 / mean_delay)) - 1
        else:
            d = int(rng.integers(0, int(2 * mean_delay) + 1))
        first_seen[ids[v]] = min(t + d, T_MAX)
        if rng.random() < obfuscation:
            timestamps[ids[v]] = None if rng.random() < empty_frac else int(rng.integers(T_MIN, T_MAX + 1))
        else:
            timestamps[ids[v]] = t
    out_records = []
    for v in range(n):
        rec = records[v]
        rec.binary_id = ids[v]
        rec.timestamp = timestamps[ids[v]]
        rec.first_seen = first_seen[ids[v]]
        out_records.append(rec)
    truth = LineageGraph(
        nodes=sorted(ids),
        edges={(ids[parent[v]], ids[v]) for v in range(n) if parent[v] is not None},
        times={ids[v]: times[v] for v in range(n)},
    )
    truth.validate()
    ev = TimeEvidence(timestamps, first_seen, T_MIN, T_MAX)
    feats = {rec.binary_id: build_features(rec) for rec in out_records}
    return SyntheticLineage(truth, ev, feats, out_records)
