"""Metropolis-Hastings posterior over each binary's creation time."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import LineagePriors, TimeEvidence, log_time_posterior_scalar, log_time_posterior_unnorm


@dataclass(frozen=True)
class MCMCConfig:
    samples: int = 1000
    burn_in: int = 200
    seed: int = 0
    # probability of the independence move versus the random walk
    jump_prob: float = 0.3


@dataclass
class TimeSamples:
    values: np.ndarray
    log_post: np.ndarray

    def histogram(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct sampled times and their normalized weights."""
        vals, counts = np.unique(self.values, return_counts=True)
        return vals, counts / counts.sum()

    @property
    def map_estimate(self) -> int:
        return int(self.values[int(np.argmax(self.log_post))])

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def mode(self) -> int:
        vals, w = self.histogram()
        return int(vals[int(np.argmax(w))])


@dataclass
class CreationTimePosterior:
    samples: dict[str, TimeSamples]

    def map_times(self) -> dict[str, int]:
        return {b: s.map_estimate for b, s in self.samples.items()}

    def draw(self, rng: np.random.Generator) -> dict[str, int]:
        return {b: int(s.values[rng.integers(len(s.values))]) for b, s in sorted(self.samples.items())}


def _initial_state(ts, fs, priors: LineagePriors, ev: TimeEvidence) -> int:
    if ts is not None and ev.t_min <= ts <= ev.t_max and (fs is None or ts <= fs):
        return int(ts)
    if fs is not None:
        return int(max(ev.t_min, fs - round(1.0 / priors.rate_seen)))
    return (ev.t_min + ev.t_max) // 2


def sample_creation_time(
    ts: int | None,
    fs: int | None,
    priors: LineagePriors,
    ev: TimeEvidence,
    cfg: MCMCConfig,
    rng: np.random.Generator,
) -> TimeSamples:
    """One chain for one binary.

    Each step picks one of two kernels: a symmetric random walk of width
    ``range / 100``, or an independence proposal that puts half its mass on the
    observed timestamp and spreads the rest uniformly over the range.
    """
    width = max(1, ev.span // 100)
    has_spike = ts is not None and ev.t_min <= ts <= ev.t_max

    def lp(t: int) -> float:
        return log_time_posterior_scalar(t, ts, fs, priors, ev)

    def log_q(t: int) -> float:
        spike = 0.5 if has_spike and t == ts else 0.0
        uni = (0.5 if has_spike else 1.0) / ev.span
        return math.log(spike + uni)

    cur = _initial_state(ts, fs, priors, ev)
    cur_lp = lp(cur)
    vals = np.empty(cfg.samples, dtype=np.int64)
    lps = np.empty(cfg.samples)
    for step in range(cfg.burn_in + cfg.samples):
        if rng.random() < cfg.jump_prob:
            if has_spike and rng.random() < 0.5:
                prop = int(ts)
            else:
                prop = int(rng.integers(ev.t_min, ev.t_max + 1))
            log_ratio_q = log_q(cur) - log_q(prop)
        else:
            prop = cur + int(rng.integers(-width, width + 1))
            log_ratio_q = 0.0
        prop_lp = lp(prop)
        if prop_lp > -math.inf:
            a = prop_lp - cur_lp + log_ratio_q
            if a >= 0 or rng.random() < math.exp(a):
                cur, cur_lp = prop, prop_lp
        if step >= cfg.burn_in:
            vals[step - cfg.burn_in] = cur
            lps[step - cfg.burn_in] = cur_lp
    return TimeSamples(vals, lps)


def infer_creation_times(
    ev: TimeEvidence,
    priors: LineagePriors = LineagePriors(),
    cfg: MCMCConfig = MCMCConfig(),
) -> CreationTimePosterior:
    """Independent per-binary posteriors; binaries without evidence get the uniform prior."""
    ids = ev.ids
    if not ids:
        raise ValueError("need at least one binary")
    streams = np.random.SeedSequence(cfg.seed).spawn(len(ids))
    out = {}
    for b, ss in zip(ids, streams):
        out[b] = sample_creation_time(ev.timestamps[b], ev.first_seen[b], priors, ev, cfg, np.random.default_rng(ss))
    return CreationTimePosterior(out)


def grid_posterior(ts, fs, priors: LineagePriors, ev: TimeEvidence) -> tuple[np.ndarray, np.ndarray]:
    """Exact normalized posterior over every integer time in the range."""
    grid = np.arange(ev.t_min, ev.t_max + 1)
    lp = log_time_posterior_unnorm(grid, ts, fs, priors, ev)
    lp = lp - lp.max()
    p = np.exp(lp)
    return grid, p / p.sum()
