"""Creation-time and lineage probability models.

Creation-time model, per binary, with ``R = t_max - t_min + 1``:

* creation ``c`` is uniform on ``[t_min, t_max]``;
* ``first_seen - c`` follows a discretized exponential,
  ``P(d) = (1 - exp(-rate_seen)) * exp(-rate_seen * d)`` for ``d >= 0``;
* the timestamp equals ``c`` with probability ``1 - q_obf``; otherwise it is
  empty (probability ``q_empty``) or uniform over the range.

Lineage model, per binary ``v`` given all creation times. ``P`` is the set of
binaries created strictly before ``v``:

* if ``P`` is empty, ``v`` is a root with probability 1;
* otherwise ``v`` is a root with probability ``root_prob``; if not, it has
  ``k`` parents where ``k`` is geometric(``parent_geom``) truncated to
  ``1 .. min(max_parents, |P|)``;
* the parent set ``S`` (``|S| = k``) is drawn with probability
  ``prod(w_j) / e_k(w)`` where ``w_j = exp(sim(j, v) / temperature)`` over
  ``P`` and ``e_k`` is the elementary symmetric polynomial of degree ``k``;
* a root's creation time keeps the uniform prior; a non-root's creation time
  is instead conditioned on its latest parent ``j``: ``t_v - t_j - 1`` follows
  a discretized exponential with rate ``gap_rate``.

The log joint of a lineage and a time assignment is the sum of all terms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

NEG_INF = -math.inf


class LineageError(ValueError):
    pass


@dataclass(frozen=True)
class LineagePriors:
    q_obf: float = 0.3
    q_empty: float = 0.5
    rate_seen: float = 1.0 / 50.0
    root_prob: float = 0.1
    parent_geom: float = 0.7
    max_parents: int = 3
    temperature: float = 0.1
    gap_rate: float = 1.0 / 15.0

    def __post_init__(self):
        for name in ("q_obf", "q_empty", "root_prob", "parent_geom"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("rate_seen", "temperature", "gap_rate"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.max_parents < 1:
            raise ValueError("max_parents must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TimeEvidence:
    timestamps: dict[str, int | None]
    first_seen: dict[str, int | None]
    t_min: int
    t_max: int

    def __post_init__(self):
        if self.t_max < self.t_min:
            raise ValueError("t_max must be >= t_min")
        if set(self.timestamps) != set(self.first_seen):
            raise ValueError("timestamps and first_seen must cover the same binaries")
        for b, fs in self.first_seen.items():
            if fs is not None and not self.t_min <= fs <= self.t_max:
                raise ValueError(f"first_seen of {b} outside [{self.t_min}, {self.t_max}]")

    @property
    def ids(self) -> list[str]:
        return sorted(self.timestamps)

    @property
    def span(self) -> int:
        return self.t_max - self.t_min + 1

    def subset(self, ids: Sequence[str]) -> "TimeEvidence":
        return TimeEvidence(
            {b: self.timestamps[b] for b in ids},
            {b: self.first_seen[b] for b in ids},
            self.t_min,
            self.t_max,
        )

    def to_json(self) -> dict:
        return {
            "t_min": self.t_min,
            "t_max": self.t_max,
            "timestamps": {b: self.timestamps[b] for b in self.ids},
            "first_seen": {b: self.first_seen[b] for b in self.ids},
        }


@dataclass
class LineageGraph:
    nodes: list[str]
    edges: set[tuple[str, str]]
    times: dict[str, int]
    score: float = NEG_INF
    info: dict = field(default_factory=dict)
    # inference internals (step-1 times, per-restart traces); not serialized
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    def parents(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {v: [] for v in self.nodes}
        for p, c in self.edges:
            out[c].append(p)
        return {v: sorted(ps) for v, ps in out.items()}

    def validate(self) -> None:
        """Every edge runs forward in time, which also rules out cycles."""
        names = set(self.nodes)
        for p, c in self.edges:
            if p not in names or c not in names:
                raise LineageError(f"edge {p}->{c} references an unknown binary")
            if not self.times[p] < self.times[c]:
                raise LineageError(f"edge {p}->{c} violates time order ({self.times[p]} >= {self.times[c]})")

    def to_json(self) -> dict:
        return {
            "edges": [list(e) for e in sorted(self.edges)],
            "times": {v: int(self.times[v]) for v in sorted(self.nodes)},
            "score": self.score,
            **self.info,
        }

    def to_dot(self) -> str:
        lines = ["digraph lineage {"]
        for v in sorted(self.nodes):
            lines.append(f'  "{v}" [label="{v}\\nt={int(self.times[v])}"];')
        for p, c in sorted(self.edges):
            lines.append(f'  "{p}" -> "{c}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------- time model


def log_geometric(d, rate: float):
    """Log pmf of the discretized exponential ``(1 - e^-r) e^(-r d)`` on ``d >= 0``."""
    d = np.asarray(d, dtype=float)
    with np.errstate(invalid="ignore"):
        out = math.log(-math.expm1(-rate)) - rate * d
    return np.where(d >= 0, out, NEG_INF)


def log_time_likelihood(t, ts: int | None, fs: int | None, priors: LineagePriors, span: int):
    """``log P(timestamp, first_seen | creation = t)`` for scalar or array ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    if fs is not None:
        out = out + log_geometric(fs - t, priors.rate_seen)
    if ts is None:
        out = out + _safe_log(priors.q_obf * priors.q_empty)
    else:
        exact = (1.0 - priors.q_obf) * (t == ts)
        rand = priors.q_obf * (1.0 - priors.q_empty) / span
        with np.errstate(divide="ignore"):
            out = out + np.log(exact + rand)
    return out


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else NEG_INF


def log_time_posterior_unnorm(t, ts, fs, priors: LineagePriors, ev: TimeEvidence):
    """Uniform prior plus evidence likelihood; -inf outside the range."""
    t = np.asarray(t, dtype=float)
    inside = (t >= ev.t_min) & (t <= ev.t_max)
    val = log_time_likelihood(t, ts, fs, priors, ev.span) - math.log(ev.span)
    return np.where(inside, val, NEG_INF)


def log_evidence(ts: int | None, fs: int | None, priors: LineagePriors, ev: TimeEvidence) -> float:
    """``log P(timestamp, first_seen)`` with creation time summed out in closed form."""
    r = priors.rate_seen
    q, e, span = priors.q_obf, priors.q_empty, ev.span

    def g(d: float) -> float:
        return -math.expm1(-r) * math.exp(-r * d) if d >= 0 else 0.0

    def g_cdf(fs_: int) -> float:
        # sum over t in [t_min, fs] of g(fs - t)
        return -math.expm1(-r * (fs_ - ev.t_min + 1))

    ts_ok = ts is not None and ev.t_min <= ts <= ev.t_max
    if fs is not None:
        if ts is None:
            p = q * e * g_cdf(fs)
        else:
            p = (1 - q) * (g(fs - ts) if ts_ok else 0.0) + q * (1 - e) * g_cdf(fs) / span
    else:
        if ts is None:
            p = q * e * span
        else:
            p = (1 - q) * (1.0 if ts_ok else 0.0) + q * (1 - e)
    return _safe_log(p) - math.log(span)


def log_time_posterior_scalar(t: float, ts, fs, priors: LineagePriors, ev: TimeEvidence) -> float:
    """Scalar twin of ``log_time_posterior_unnorm`` for inner loops."""
    if not ev.t_min <= t <= ev.t_max:
        return NEG_INF
    out = -math.log(ev.span)
    if fs is not None:
        d = fs - t
        if d < 0:
            return NEG_INF
        out += math.log(-math.expm1(-priors.rate_seen)) - priors.rate_seen * d
    if ts is None:
        return out + _safe_log(priors.q_obf * priors.q_empty)
    p = priors.q_obf * (1.0 - priors.q_empty) / ev.span
    if t == ts:
        p += 1.0 - priors.q_obf
    return out + _safe_log(p)


def time_terms(times: Mapping[str, float], ev: TimeEvidence, priors: LineagePriors) -> float:
    total = 0.0
    for b, t in times.items():
        total += log_time_posterior_scalar(t, ev.timestamps[b], ev.first_seen[b], priors, ev)
    return total


# ---------------------------------------------------------------------------- lineage model


def log_elementary_symmetric(logw: np.ndarray, kmax: int) -> np.ndarray:
    """``log e_k(w)`` for ``k = 0 .. kmax`` computed stably from log weights."""
    out = np.full(kmax + 1, NEG_INF)
    out[0] = 0.0
    if len(logw) == 0:
        return out
    shift = float(np.max(logw))
    w = np.exp(logw - shift)
    e = np.zeros(kmax + 1)
    e[0] = 1.0
    for x in w:
        e[1:] = e[1:] + x * e[:-1]
    with np.errstate(divide="ignore"):
        out = np.log(e) + shift * np.arange(kmax + 1)
    return out


def log_parent_count(k: int, kmax: int, priors: LineagePriors) -> float:
    if not 1 <= k <= kmax:
        return NEG_INF
    g = priors.parent_geom
    ks = np.arange(1, kmax + 1)
    pmf = g * (1 - g) ** (ks - 1)
    return float(math.log(pmf[k - 1]) - math.log(pmf.sum()))


class LineageModel:
    """Scores structures and times over a fixed set of binaries.

    ``sim`` is the pairwise similarity matrix in ``nodes`` order.
    """

    def __init__(self, nodes: Sequence[str], sim: np.ndarray, ev: TimeEvidence, priors: LineagePriors):
        self.nodes = list(nodes)
        self.index = {b: i for i, b in enumerate(self.nodes)}
        self.sim = np.asarray(sim, dtype=float)
        if self.sim.shape != (len(self.nodes), len(self.nodes)):
            raise LineageError("similarity matrix does not match nodes")
        self.ev = ev
        self.priors = priors
        self.logw = self.sim / priors.temperature
        self._ts = [ev.timestamps[b] for b in self.nodes]
        self._fs = [ev.first_seen[b] for b in self.nodes]
        self._log_span = math.log(ev.span)
        self._log_gap_norm = math.log(-math.expm1(-priors.gap_rate))
        self._ek_cache: dict[tuple[int, bytes], np.ndarray] = {}
        self._count_cache: dict[tuple[int, int], float] = {}

    def _log_ek(self, i: int, cand: np.ndarray, kmax: int) -> np.ndarray:
        key = (i, cand.tobytes())
        hit = self._ek_cache.get(key)
        if hit is None:
            hit = self._ek_cache[key] = log_elementary_symmetric(self.logw[cand, i], kmax)
        return hit

    def _log_count(self, k: int, kmax: int) -> float:
        hit = self._count_cache.get((k, kmax))
        if hit is None:
            hit = self._count_cache[(k, kmax)] = log_parent_count(k, kmax, self.priors)
        return hit

    # times are arrays indexed like ``nodes``

    def time_term(self, i: int, t: float) -> float:
        return log_time_posterior_scalar(t, self._ts[i], self._fs[i], self.priors, self.ev)

    def possible_parents(self, i: int, times: np.ndarray) -> np.ndarray:
        return np.flatnonzero(times < times[i])

    def node_term(self, i: int, parents: Sequence[int], times: np.ndarray, cand: np.ndarray | None = None) -> float:
        """Root / parent-count / parent-choice / gap terms for node ``i``."""
        pr = self.priors
        if cand is None:
            cand = self.possible_parents(i, times)
        k = len(parents)
        if len(cand) == 0:
            return 0.0 if k == 0 else NEG_INF
        if k == 0:
            return math.log(pr.root_prob) if pr.root_prob > 0 else NEG_INF
        kmax = min(pr.max_parents, len(cand))
        if k > kmax:
            return NEG_INF
        for j in parents:
            if not times[j] < times[i]:
                return NEG_INF
        log_ek = self._log_ek(i, np.asarray(cand), kmax)[k]
        gap = times[i] - max(times[j] for j in parents) - 1
        # the gap density replaces the uniform creation prior counted in time_term
        return (
            _safe_log(1.0 - pr.root_prob)
            + self._log_count(k, kmax)
            + sum(float(self.logw[j, i]) for j in parents)
            - float(log_ek)
            + self._log_gap_norm
            - pr.gap_rate * gap
            + self._log_span
        )

    def structure_score(self, parent_sets: Sequence[Sequence[int]], times: np.ndarray) -> float:
        return sum(self.node_term(i, ps, times) for i, ps in enumerate(parent_sets))

    def times_score(self, times: np.ndarray) -> float:
        return sum(self.time_term(i, times[i]) for i in range(len(self.nodes)))

    def joint(self, parent_sets: Sequence[Sequence[int]], times: np.ndarray) -> float:
        return self.structure_score(parent_sets, times) + self.times_score(times)


def similarity_matrix(features: Sequence, cw=None) -> np.ndarray:
    from ..similarity import ChannelWeights, distance_matrix

    return 1.0 - distance_matrix(list(features), cw=cw or ChannelWeights())


def score_lineage(
    graph: LineageGraph,
    features: Mapping[str, object],
    ev: TimeEvidence,
    priors: LineagePriors = LineagePriors(),
    sim: np.ndarray | None = None,
) -> float:
    """Log joint probability of ``graph`` (edges and times) under the model."""
    graph.validate()
    nodes = sorted(graph.nodes)
    if sim is None:
        sim = similarity_matrix([features[b] for b in nodes])
    model = LineageModel(nodes, sim, ev.subset(nodes), priors)
    times = np.array([graph.times[b] for b in nodes], dtype=float)
    parents = graph.parents()
    sets = [[model.index[p] for p in parents[b]] for b in nodes]
    return model.joint(sets, times)
