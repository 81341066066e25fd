"""Small confidence-interval helpers used by the estimators and the audit."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def z_value(confidence: float) -> float:
    """Two-sided normal quantile for ``confidence`` (0.95 -> 1.96)."""
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    return float(stats.norm.ppf(0.5 + confidence / 2))


def wilson_interval(successes, n, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion (vectorised)."""
    successes = np.asarray(successes, dtype=float)
    n = np.asarray(n, dtype=float)
    z = z_value(confidence)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = successes / n
        denom = 1 + z * z / n
        centre = (p + z * z / (2 * n)) / denom
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = np.clip(centre - half, 0.0, 1.0)
    hi = np.clip(centre + half, 0.0, 1.0)
    # exact endpoints when all trials agree
    lo = np.where(successes <= 0, 0.0, lo)
    hi = np.where(successes >= n, 1.0, hi)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def mean_ci(values, confidence: float = 0.95):
    """(mean, standard error, lo, hi) with a normal approximation."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    z = z_value(confidence)
    return mean, se, mean - z * se, mean + z * se


def ceil_int(x: float) -> int:
    """Ceiling that ignores floating noise just above an integer."""
    if not math.isfinite(x):
        raise OverflowError(f"cannot take ceiling of {x}")
    return int(math.ceil(x - 1e-9 * max(1.0, abs(x))))
