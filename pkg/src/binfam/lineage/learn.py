"""Learning the creation-time priors from corpora with time evidence.

``q_obf``, ``q_empty`` and ``u = 1 - exp(-rate_seen)`` each carry a Beta
hyperprior. Every round draws candidate priors from the current Beta
proposals, weights each candidate by hyperprior times evidence probability
(creation times summed out exactly) over proposal density, and refits the
proposals by weighted moments, blended with the previous proposal. Iteration stops once the best log evidence
seen has not improved by ``tol`` for ``patience`` rounds, or after
``max_rounds``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import beta as beta_dist

from .model import LineageError, LineagePriors, TimeEvidence, log_evidence

PARAMS = ("q_obf", "q_empty", "u_seen")


@dataclass(frozen=True)
class LearnConfig:
    candidates: int = 200
    max_rounds: int = 100
    tol: float = 1e-6
    patience: int = 5
    smooth: float = 0.5
    seed: int = 0
    # Beta(a, b) hyperpriors, weakly informative
    hyper: tuple[tuple[float, float], ...] = ((1.0, 1.0), (1.0, 1.0), (1.0, 1.0))


def _to_priors(base: LineagePriors, q_obf: float, q_empty: float, u: float) -> LineagePriors:
    return replace(base, q_obf=q_obf, q_empty=q_empty, rate_seen=-math.log1p(-u))


def corpus_log_evidence(corpora: Sequence[TimeEvidence], priors: LineagePriors) -> float:
    return sum(
        log_evidence(ev.timestamps[b], ev.first_seen[b], priors, ev)
        for ev in corpora
        for b in ev.ids
    )


def _beta_moments(a: float, b: float) -> tuple[float, float]:
    m = a / (a + b)
    return m, m * (1 - m) / (a + b + 1)


def _fit_beta(x: np.ndarray, w: np.ndarray, prev: tuple[float, float], smooth: float) -> tuple[float, float]:
    """Weighted moment fit, blended with the previous proposal so it narrows gradually."""
    m = float(np.sum(w * x))
    v = float(np.sum(w * (x - m) ** 2))
    pm, pv = _beta_moments(*prev)
    m_new = smooth * m + (1 - smooth) * pm
    # mixture variance keeps the spread between the two means
    v = smooth * (v + (m - m_new) ** 2) + (1 - smooth) * (pv + (pm - m_new) ** 2)
    m = min(max(m_new, 1e-6), 1 - 1e-6)
    v = max(v, 1e-10)
    common = m * (1 - m) / v - 1.0
    if common <= 0:
        return 1.0, 1.0
    return max(m * common, 1e-3), max((1 - m) * common, 1e-3)


def learn_priors(
    corpora: Sequence[TimeEvidence],
    base: LineagePriors = LineagePriors(),
    cfg: LearnConfig = LearnConfig(),
) -> LineagePriors:
    usable = [ev for ev in corpora if any(ev.timestamps[b] is not None or ev.first_seen[b] is not None for b in ev.ids)]
    if not usable:
        raise LineageError("no usable time evidence to learn priors from")
    rng = np.random.default_rng(cfg.seed)
    eps = 1e-6
    proposals = [tuple(h) for h in cfg.hyper]
    best_ll, best = -math.inf, None
    stale = 0
    for _ in range(cfg.max_rounds):
        draws = np.column_stack([rng.beta(a, b, size=cfg.candidates) for a, b in proposals])
        draws = np.clip(draws, eps, 1 - eps)
        ll = np.array([corpus_log_evidence(usable, _to_priors(base, *row)) for row in draws])
        log_w = ll.copy()
        for k, ((ha, hb), (pa, pb)) in enumerate(zip(cfg.hyper, proposals)):
            log_w += beta_dist.logpdf(draws[:, k], ha, hb) - beta_dist.logpdf(draws[:, k], pa, pb)
        w = np.exp(log_w - logsumexp(log_w))
        i = int(np.argmax(ll))
        stale = 0 if ll[i] > best_ll + cfg.tol else stale + 1
        if ll[i] > best_ll:
            best_ll, best = float(ll[i]), draws[i]
        if stale >= cfg.patience:
            break
        proposals = [_fit_beta(draws[:, k], w, proposals[k], cfg.smooth) for k in range(len(PARAMS))]
    return _to_priors(base, *best)
