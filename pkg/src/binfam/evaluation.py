"""Clustering and classification metrics, and the incremental speed-up predicate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.special import comb

Labels = Mapping[Hashable, Hashable]


def _aligned(pred: Labels, truth: Labels) -> tuple[list, list]:
    if set(pred) != set(truth):
        missing = set(truth) ^ set(pred)
        raise ValueError(f"prediction and truth cover different items ({len(missing)} differ)")
    keys = sorted(truth, key=repr)
    return [pred[k] for k in keys], [truth[k] for k in keys]


def _codes(labels: Sequence) -> np.ndarray:
    seen: dict = {}
    return np.array([seen.setdefault(lab, len(seen)) for lab in labels], dtype=np.int64)


def contingency(pred: Sequence, truth: Sequence) -> np.ndarray:
    """Counts table with predicted clusters on rows and truth clusters on columns."""
    p = _codes(pred)
    t = _codes(truth)
    table = np.zeros((p.max() + 1 if len(p) else 0, t.max() + 1 if len(t) else 0), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def _pair_counts(table: np.ndarray) -> tuple[float, float, float]:
    """Same-cluster pair counts: (both, predicted only, truth only)."""
    both = comb(table, 2).sum()
    pred_pairs = comb(table.sum(axis=1), 2).sum()
    truth_pairs = comb(table.sum(axis=0), 2).sum()
    return float(both), float(pred_pairs - both), float(truth_pairs - both)


def jaccard_index_clusterings(pred: Labels, truth: Labels) -> float:
    """Pair-counting Jaccard: TP / (TP + FP + FN) over item pairs."""
    p, t = _aligned(pred, truth)
    tp, fp, fn = _pair_counts(contingency(p, t))
    den = tp + fp + fn
    # no same-cluster pair on either side: the partitions agree (all singletons)
    return 1.0 if den == 0 else tp / den


def purity(pred: Labels, truth: Labels) -> float:
    """Fraction of items that belong to the dominant truth class of their predicted cluster."""
    p, t = _aligned(pred, truth)
    if not p:
        return 1.0
    table = contingency(p, t)
    return float(table.max(axis=1).sum() / len(p))


def inverse_purity(pred: Labels, truth: Labels) -> float:
    return purity(truth, pred)


def adjusted_rand_index(pred: Labels, truth: Labels) -> float:
    p, t = _aligned(pred, truth)
    return ari_from_sequences(p, t)


def ari_from_sequences(pred: Sequence, truth: Sequence) -> float:
    n = len(pred)
    if n != len(truth):
        raise ValueError("label sequences differ in length")
    if n < 2:
        return 1.0
    table = contingency(pred, truth)
    index = comb(table, 2).sum()
    a = comb(table.sum(axis=1), 2).sum()
    b = comb(table.sum(axis=0), 2).sum()
    expected = a * b / comb(n, 2)
    max_index = (a + b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f_measure: float

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
        }


def precision_recall_f(tp: int, fp: int, tn: int, fn: int) -> ClassificationMetrics:
    """Standard confusion-matrix metrics; any 0/0 ratio is reported as 0."""
    if min(tp, fp, tn, fn) < 0:
        raise ValueError("counts must be non-negative")

    def ratio(a: float, b: float) -> float:
        return a / b if b else 0.0

    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    return ClassificationMetrics(
        accuracy=ratio(tp + tn, tp + fp + tn + fn),
        precision=precision,
        recall=recall,
        f_measure=ratio(2 * precision * recall, precision + recall),
    )


def clustering_report(pred: Labels, truth: Labels) -> dict:
    return {
        "jaccard": jaccard_index_clusterings(pred, truth),
        "purity": purity(pred, truth),
        "inverse_purity": inverse_purity(pred, truth),
        "ari": adjusted_rand_index(pred, truth),
        "n_items": len(truth),
        "n_pred_clusters": len(set(pred.values())),
        "n_truth_clusters": len(set(truth.values())),
    }


@dataclass(frozen=True)
class SpeedupVerdict:
    single_shot_faster: bool
    batched_faster: bool


def incremental_speedup_predicate(b: float, h_d: float, d_r: float, p: float, s: int) -> SpeedupVerdict:
    """Whether incremental re-clustering beats one full clustering.

    ``b`` is the branching factor, ``h_d`` the hierarchy depth, ``p`` the
    exponent of the clusterer's cost and ``s`` the number of batches.
    """
    if b < 2:
        raise ValueError("branching factor must be >= 2")
    if p <= 1:
        raise ValueError("cost exponent must be > 1")
    if not 2 <= d_r <= h_d:
        raise ValueError("need 2 <= d_r <= H_d")
    if s < 1:
        raise ValueError("need at least one batch")
    rhs = h_d * (p - 1)
    lhs = d_r * (p - 1) + 1
    return SpeedupVerdict(
        single_shot_faster=lhs < rhs,
        batched_faster=math.log((s + 1) / 2) / math.log(b) + lhs < rhs,
    )
