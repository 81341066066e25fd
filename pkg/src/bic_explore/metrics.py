"""Regret and average-reward summaries computed from transcripts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Transcript
from .stats import z_value


@dataclass
class RegretCurve:
    """Cumulative regret per round, averaged over replicates."""

    mean: np.ndarray
    se: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    replicates: int
    per_instance: np.ndarray | None = None

    @classmethod
    def from_matrix(cls, regrets: np.ndarray, confidence: float = 0.95, keep: bool = False) -> "RegretCurve":
        regrets = np.atleast_2d(np.asarray(regrets, dtype=float))
        n = regrets.shape[0]
        mean = regrets.mean(axis=0)
        se = regrets.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
        z = z_value(confidence)
        return cls(mean, se, mean - z * se, mean + z * se, n, regrets if keep else None)

    @property
    def T(self) -> int:
        return self.mean.size

    def final(self) -> tuple[float, float]:
        return float(self.mean[-1]), float(self.se[-1])


def regret_path(transcript: Transcript) -> np.ndarray:
    """Ex-post cumulative regret t * max mu - sum_{s <= t} mu_{I_s}."""
    mu = transcript.mean_rewards()
    best = transcript.instance.best if transcript.context is None else None
    if best is None:
        best_per_round = transcript.instance.means[:, transcript.context].max(axis=0)
        return np.cumsum(best_per_round - mu)
    return np.arange(1, len(mu) + 1) * best - np.cumsum(mu)


def expost_regret(transcript: Transcript, instance=None) -> float:
    """T * max_i mu_i - sum_t mu_{I_t} (uses the transcript's instance unless given)."""
    mu_all = (instance if instance is not None else transcript.instance).means
    if transcript.context is None:
        mu = mu_all[transcript.recommendation]
        return float(len(mu) * mu_all.max() - mu.sum())
    mu = mu_all[transcript.recommendation, transcript.context]
    return float(mu_all[:, transcript.context].max(axis=0).sum() - mu.sum())


def bayes_regret(transcripts: Sequence[Transcript], confidence: float = 0.95, keep: bool = False) -> RegretCurve:
    """Mean ex-post regret curve across replicates (all transcripts share T)."""
    lengths = {len(t) for t in transcripts}
    if len(lengths) != 1:
        raise ValueError("transcripts must share the horizon")
    return RegretCurve.from_matrix(np.stack([regret_path(t) for t in transcripts]), confidence, keep)


def window_rewards(transcripts: Sequence[Transcript], start: int, stop: int) -> np.ndarray:
    """Per-replicate mean of mu_{I_t} over rounds start..stop (1-based, inclusive)."""
    if not 1 <= start <= stop:
        raise ValueError("empty reward window")
    out = []
    for t in transcripts:
        if stop > len(t):
            raise ValueError(f"window ends at {stop} but the transcript has {len(t)} rounds")
        out.append(t.mean_rewards()[start - 1:stop].mean())
    return np.asarray(out)


def avg_reward_window(transcripts: Sequence[Transcript], start: int, stop: int) -> float:
    """Mean over replicates of the average mu_{I_t} for t in [start, stop]."""
    return float(window_rewards(transcripts, start, stop).mean())
