"""Distance between feature sets and the exemplar aggregation functions."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from sklearn.metrics.pairwise import manhattan_distances

from .features import NUM_NGRAM_BAGS, BinaryFeatures, FeatureBag


@dataclass(frozen=True)
class ChannelWeights:
    ngram: float = 0.5
    string: float = 0.3
    imports: float = 0.2

    def __post_init__(self):
        ws = (self.ngram, self.string, self.imports)
        if any(w < 0 for w in ws):
            raise ValueError("channel weights must be non-negative")
        if abs(sum(ws) - 1.0) > 1e-12:
            raise ValueError(f"channel weights must sum to 1, got {sum(ws)!r}")

    def per_bag(self) -> np.ndarray:
        """Weight of each of the six bags; n-gram weight is split evenly over the seeds."""
        return np.array([self.ngram / NUM_NGRAM_BAGS] * NUM_NGRAM_BAGS + [self.string, self.imports])

    def to_json(self) -> dict:
        return {"ngram": self.ngram, "string": self.string, "imports": self.imports}


class ThetaKind(str, enum.Enum):
    INTERSECTION = "intersect"
    WEIGHTED_AVERAGE = "avg"


def weighted_jaccard_distance(a: FeatureBag, b: FeatureBag) -> float:
    """``1 - sum(min) / sum(max)`` over the union of features; two empty bags are at distance 0."""
    if len(a) > len(b):
        a, b = b, a
    # sum(max) = |a| + |b| - sum(min), so only shared keys need visiting
    num = 0.0
    for f, wa in a.items():
        wb = b.get(f)
        if wb is not None:
            num += wa if wa < wb else wb
    den = sum(a.values()) + sum(b.values()) - num
    if den <= 0.0:
        return 0.0
    return max(0.0, 1.0 - num / den)


def combined_distance(x: BinaryFeatures, y: BinaryFeatures, cw: ChannelWeights = ChannelWeights()) -> float:
    d_ngram = sum(weighted_jaccard_distance(a, b) for a, b in zip(x.ngram_bags, y.ngram_bags)) / NUM_NGRAM_BAGS
    d_string = weighted_jaccard_distance(x.string_bag, y.string_bag)
    d_import = weighted_jaccard_distance(x.import_bag, y.import_bag)
    return cw.ngram * d_ngram + cw.string * d_string + cw.imports * d_import


def _bag_intersection(bags: Sequence[FeatureBag]) -> FeatureBag:
    keys = set(bags[0])
    for b in bags[1:]:
        keys &= b.keys()
    return {k: 1.0 for k in keys}


def _bag_weighted_average(bags: Sequence[FeatureBag], sizes: Sequence[int]) -> FeatureBag:
    total = float(sum(sizes))
    acc: dict[str, float] = {}
    for bag, s in zip(bags, sizes):
        for k, w in bag.items():
            acc[k] = acc.get(k, 0.0) + s * w
    return {k: v / total for k, v in acc.items() if v > 0.0}


def theta(kind: ThetaKind, children: Sequence[BinaryFeatures]) -> BinaryFeatures:
    """Aggregate child feature sets into exemplar features.

    Each child carries its own represented-binary count in ``size``; the result
    represents the sum of the children's sizes.
    """
    if not children:
        raise ValueError("theta needs at least one child")
    kind = ThetaKind(kind)
    sizes = [c.size for c in children]
    total = sum(sizes)
    if len(children) == 1:
        return children[0]
    per_bag = list(zip(*(c.bags for c in children)))
    if kind is ThetaKind.INTERSECTION:
        bags = [_bag_intersection(b) for b in per_bag]
    else:
        bags = [_bag_weighted_average(b, sizes) for b in per_bag]
    return BinaryFeatures.from_bags(bags, total)


class FeatureMatrix:
    """Sparse per-bag encoding of a list of feature sets for batched distances."""

    def __init__(self, feats: Sequence[BinaryFeatures], vocab: list[dict[str, int]] | None = None):
        self.vocab = vocab if vocab is not None else [{} for _ in range(NUM_NGRAM_BAGS + 2)]
        self.mats: list[sparse.csr_matrix] = []
        self.sums: list[np.ndarray] = []
        n = len(feats)
        for bag_idx in range(NUM_NGRAM_BAGS + 2):
            voc = self.vocab[bag_idx]
            indptr = [0]
            indices: list[int] = []
            data: list[float] = []
            for f in feats:
                bag = f.bags[bag_idx]
                for tok, w in bag.items():
                    j = voc.get(tok)
                    if j is None:
                        j = voc[tok] = len(voc)
                    indices.append(j)
                    data.append(w)
                indptr.append(len(indices))
            self.mats.append((indptr, indices, data, n))
            self.sums.append(np.array([sum(f.bags[bag_idx].values()) for f in feats], dtype=float))

    def csr(self, bag_idx: int) -> sparse.csr_matrix:
        indptr, indices, data, n = self.mats[bag_idx]
        width = max(len(self.vocab[bag_idx]), 1)
        return sparse.csr_matrix((np.asarray(data, float), np.asarray(indices, np.int64), np.asarray(indptr, np.int64)), shape=(n, width))


def distance_matrix(
    xs: Sequence[BinaryFeatures],
    ys: Sequence[BinaryFeatures] | None = None,
    cw: ChannelWeights = ChannelWeights(),
) -> np.ndarray:
    """Combined distance between every ``x`` and every ``y`` (``ys`` defaults to ``xs``).

    Uses ``sum(min) = (|a| + |b| - L1) / 2`` and ``sum(max) = (|a| + |b| + L1) / 2``
    so the whole matrix reduces to sparse L1 distances.
    """
    same = ys is None
    if len(xs) == 0 or (not same and len(ys) == 0):
        return np.zeros((len(xs), len(xs) if same else len(ys)))
    fx = FeatureMatrix(xs)
    fy = fx if same else FeatureMatrix(ys, fx.vocab)
    weights = cw.per_bag()
    out = np.zeros((len(xs), len(xs) if same else len(ys)))
    for bag_idx, w in enumerate(weights):
        if w == 0.0:
            continue
        a = fx.csr(bag_idx)
        b = a if same else fy.csr(bag_idx)
        l1 = manhattan_distances(a, b)
        tot = fx.sums[bag_idx][:, None] + fy.sums[bag_idx][None, :]
        den = tot + l1
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(den > 0.0, 1.0 - (tot - l1) / np.where(den > 0.0, den, 1.0), 0.0)
        out += w * np.clip(d, 0.0, 1.0)
    if same:
        out = (out + out.T) / 2.0
        np.fill_diagonal(out, 0.0)
    return out
