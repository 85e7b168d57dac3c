"""Joint inference of creation times and the lineage graph.

1. infer per-binary creation-time posteriors (Metropolis-Hastings);
2. draw a time assignment (the MAP estimates on the first restart);
3. find the most likely lineage given the times by simulated annealing;
4. find the most likely times given the lineage by coordinate ascent; edges
   keep their endpoints and are re-oriented when times swap order;
5. alternate 3 and 4 until nothing changes or ``max_rounds`` is reached;
6. repeat from 2 for ``restarts`` draws and keep the best joint score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import (
    NEG_INF,
    LineageError,
    LineageGraph,
    LineageModel,
    LineagePriors,
    TimeEvidence,
    similarity_matrix,
)
from .times import CreationTimePosterior, MCMCConfig, infer_creation_times


@dataclass(frozen=True)
class SAConfig:
    iters_per_node: int = 200
    t_start: float = 2.0
    t_end: float = 0.01


@dataclass(frozen=True)
class InferenceConfig:
    restarts: int = 10
    max_rounds: int = 20
    seed: int = 0
    sa: SAConfig = field(default_factory=SAConfig)
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)


ParentSets = list[list[int]]


def anneal_structure(
    model: LineageModel,
    times: np.ndarray,
    init: ParentSets,
    cfg: SAConfig,
    rng: np.random.Generator,
) -> tuple[ParentSets, float]:
    """Simulated annealing over parent sets with times held fixed.

    Node terms are independent given the times, so each move only rescores the
    node it touches. Returns the best state visited.
    """
    n = len(model.nodes)
    cands = [model.possible_parents(i, times) for i in range(n)]
    cur = [sorted(j for j in ps if times[j] < times[i]) for i, ps in enumerate(init)]
    kmax = model.priors.max_parents
    for i in range(n):
        if len(cur[i]) > min(kmax, len(cands[i])):
            cur[i] = []
    terms = [model.node_term(i, cur[i], times, cands[i]) for i in range(n)]
    movable = [i for i in range(n) if len(cands[i]) > 0]
    best = [list(ps) for ps in cur]
    best_total = cur_total = float(sum(terms))
    steps = cfg.iters_per_node * n
    if not movable or steps == 0:
        return best, best_total
    decay = (cfg.t_end / cfg.t_start) ** (1.0 / max(steps - 1, 1))
    temp = cfg.t_start
    for _ in range(steps):
        i = movable[int(rng.integers(len(movable)))]
        ps = cur[i]
        cand = cands[i]
        move = int(rng.integers(4))
        if move == 0:
            new = []
        elif move == 1:
            if len(ps) >= min(kmax, len(cand)):
                temp *= decay
                continue
            options = [j for j in cand if j not in ps]
            new = sorted(ps + [int(options[int(rng.integers(len(options)))])])
        elif move == 2:
            if not ps:
                temp *= decay
                continue
            drop = ps[int(rng.integers(len(ps)))]
            new = [j for j in ps if j != drop]
        else:
            options = [j for j in cand if j not in ps]
            if not ps or not options:
                if not ps and len(cand):
                    new = [int(cand[int(rng.integers(len(cand)))])]
                else:
                    temp *= decay
                    continue
            else:
                drop = ps[int(rng.integers(len(ps)))]
                add = int(options[int(rng.integers(len(options)))])
                new = sorted([j for j in ps if j != drop] + [add])
        new_term = model.node_term(i, new, times, cand)
        delta = new_term - terms[i]
        if delta >= 0 or (new_term > NEG_INF and rng.random() < math.exp(delta / temp)):
            cur[i] = new
            terms[i] = new_term
            cur_total += delta
            if cur_total > best_total + 1e-12:
                best_total = cur_total
                best = [list(p) for p in cur]
        temp *= decay
    return best, model.structure_score(best, times)


def _orient(edges: set[frozenset], times: np.ndarray, n: int) -> ParentSets | None:
    ps: ParentSets = [[] for _ in range(n)]
    for e in edges:
        a, b = tuple(e)
        if times[a] == times[b]:
            return None
        if times[a] < times[b]:
            ps[b].append(a)
        else:
            ps[a].append(b)
    return [sorted(p) for p in ps]


def _undirected(ps: ParentSets) -> set[frozenset]:
    return {frozenset((j, i)) for i, p in enumerate(ps) for j in p}


def optimize_times(
    model: LineageModel,
    parent_sets: ParentSets,
    times: np.ndarray,
    max_sweeps: int = 20,
) -> tuple[ParentSets, np.ndarray, float]:
    """Coordinate ascent over creation times with the undirected edge set fixed.

    Candidate values for a node are its evidence anchors, the range ends and
    the neighbours of every other node's time. A move is taken only if the
    joint score strictly improves.
    """
    n = len(model.nodes)
    ev = model.ev
    edges = _undirected(parent_sets)
    times = times.astype(float).copy()
    cur_ps = _orient(edges, times, n)
    cur = model.joint(cur_ps, times) if cur_ps is not None else NEG_INF
    for _ in range(max_sweeps):
        changed = False
        for i in range(n):
            cands = {ev.t_min, ev.t_max}
            ts, fs = model._ts[i], model._fs[i]
            if ts is not None:
                cands.add(ts)
            if fs is not None:
                cands.add(fs)
            for j in range(n):
                if j != i:
                    for d in (-1, 1):
                        cands.add(times[j] + d)
            best_t, best_s, best_ps = times[i], cur, cur_ps
            for t in sorted(cands):
                if t == times[i] or not ev.t_min <= t <= ev.t_max:
                    continue
                old = times[i]
                times[i] = t
                ps = _orient(edges, times, n)
                s = model.joint(ps, times) if ps is not None else NEG_INF
                times[i] = old
                if s > best_s + 1e-12:
                    best_t, best_s, best_ps = t, s, ps
            if best_t != times[i]:
                times[i] = best_t
                cur, cur_ps = best_s, best_ps
                changed = True
        if not changed:
            break
    return cur_ps, times, cur


@dataclass
class RestartTrace:
    scores: list[float]
    rounds: int
    final: float


def infer_lineage(
    features: Mapping[str, object],
    ev: TimeEvidence,
    priors: LineagePriors = LineagePriors(),
    cfg: InferenceConfig = InferenceConfig(),
    posterior: CreationTimePosterior | None = None,
    sim: np.ndarray | None = None,
) -> LineageGraph:
    nodes = sorted(features)
    if len(nodes) < 2:
        raise LineageError("need >= 2 binaries to infer a lineage")
    if set(nodes) - set(ev.ids):
        raise LineageError("time evidence missing for some binaries")
    ev = ev.subset(nodes)
    if sim is None:
        sim = similarity_matrix([features[b] for b in nodes])
    model = LineageModel(nodes, sim, ev, priors)
    n = len(nodes)
    if posterior is None:
        posterior = infer_creation_times(ev, priors, MCMCConfig(**{**cfg.mcmc.__dict__, "seed": cfg.seed}))
    step1 = posterior.map_times()
    streams = np.random.SeedSequence([cfg.seed, 1]).spawn(max(cfg.restarts, 1))
    best: tuple[float, ParentSets, np.ndarray] | None = None
    traces = []
    for r, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        draw = step1 if r == 0 else posterior.draw(rng)
        times = np.array([draw[b] for b in nodes], dtype=float)
        ps: ParentSets = [[] for _ in range(n)]
        history = []
        rounds = 0
        score = NEG_INF
        for rounds in range(1, cfg.max_rounds + 1):
            ps_new, _ = anneal_structure(model, times, ps, cfg.sa, rng)
            s3 = model.joint(ps_new, times)
            history.append(s3)
            ps_t, times_new, s4 = optimize_times(model, ps_new, times)
            if ps_t is None or s4 < s3:
                ps_t, times_new, s4 = ps_new, times, s3
            history.append(s4)
            stable = _undirected(ps_t) == _undirected(ps) and np.max(np.abs(times_new - times)) < 1
            ps, times, score = ps_t, times_new, s4
            if stable:
                break
        traces.append(RestartTrace(history, rounds, score))
        if best is None or score > best[0] + 1e-12:
            best = (score, [list(p) for p in ps], times.copy())
    score, ps, times = best
    edges = {(nodes[j], nodes[i]) for i, p in enumerate(ps) for j in p}
    graph = LineageGraph(
        nodes=nodes,
        edges=edges,
        times={b: int(times[i]) for i, b in enumerate(nodes)},
        score=float(score),
        info={"restarts_used": len(streams)},
    )
    graph.diagnostics = {"step1_times": step1, "traces": traces}
    graph.validate()
    return graph


# ---------------------------------------------------------------------------- brute force


def enumerate_parent_sets(model: LineageModel, times: np.ndarray):
    """All admissible parent sets per node (root, or 1..max_parents earlier nodes)."""
    from itertools import combinations

    out = []
    for i in range(len(model.nodes)):
        cand = model.possible_parents(i, times).tolist()
        opts = [[]]
        for k in range(1, min(model.priors.max_parents, len(cand)) + 1):
            opts.extend(list(c) for c in combinations(cand, k))
        out.append(opts)
    return out


def best_structure_bruteforce(model: LineageModel, times: np.ndarray) -> tuple[ParentSets, float]:
    """Exhaustive argmax over every time-consistent lineage for fixed times.

    Enumerates the full product of per-node options, so keep ``n`` small.
    """
    from itertools import product

    opts = enumerate_parent_sets(model, times)
    best_ps, best_s = None, NEG_INF
    for combo in product(*opts):
        s = model.structure_score(list(combo), times)
        if s > best_s:
            best_ps, best_s = [list(c) for c in combo], s
    return best_ps, best_s + model.times_score(times)


# ---------------------------------------------------------------------------- evaluation


def evaluate_lineage(pred: LineageGraph, truth: LineageGraph) -> dict:
    """Directed edge precision/recall, undirected edge Jaccard and time MAE."""
    if set(pred.nodes) != set(truth.nodes):
        raise LineageError("predicted and true lineages cover different binaries")
    pe, te = set(pred.edges), set(truth.edges)
    tp = len(pe & te)

    def ratio(a: int, b: int) -> float:
        return a / b if b else (1.0 if not pe and not te else 0.0)

    pu = {frozenset(e) for e in pe}
    tu = {frozenset(e) for e in te}
    union = pu | tu
    return {
        "edge_precision": ratio(tp, len(pe)),
        "edge_recall": ratio(tp, len(te)),
        "undirected_accuracy": len(pu & tu) / len(union) if union else 1.0,
        "time_mae": float(np.mean([abs(pred.times[b] - truth.times[b]) for b in truth.nodes])),
    }


def time_mae(times: Mapping[str, float], truth: Mapping[str, float]) -> float:
    return float(np.mean([abs(times[b] - truth[b]) for b in truth]))
