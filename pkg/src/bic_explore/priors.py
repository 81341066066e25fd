"""Prior models, posterior queries and the prior-dependent constants that
make the exploration schemes incentive-compatible.

Two prior shapes are supported: independent per-arm marginals
(:class:`IndependentPrior`) and correlated priors given by a joint sampler
(:class:`JointPrior`, posterior by self-normalised importance sampling).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .model import BERNOULLI, POINTMASS, BicError, RewardFamily
from .stats import ceil_int, wilson_interval, z_value


class PriorNotPersuadable(BicError):
    """The prior gives no positive-probability event on which a lower-ranked
    arm looks better, so no BIC scheme can explore it."""


class DegenerateDataError(BicError, ValueError):
    """The data has zero likelihood under every grid point / prior draw."""


class ArmOrderError(BicError, ValueError):
    """Prior means are not non-increasing in the arm index."""


# ---------------------------------------------------------------------------
# Per-arm marginals
# ---------------------------------------------------------------------------

class ArmPrior:
    """Marginal prior of one arm together with its reward family."""

    family: RewardFamily = BERNOULLI
    kind = "abstract"

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def posterior_mean(self, n, s) -> np.ndarray:
        """E[mu | n rewards summing to s]; vectorised over n and s."""
        raise NotImplementedError

    def posterior_mean_scalar(self, n: float, s: float) -> float:
        return float(self.posterior_mean(n, s))

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianConjugate(ArmPrior):
    """mu ~ N(mean0, var), rewards ~ N(mu, noise_var)."""

    mean0: float
    var: float
    noise_var: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not (self.var > 0 and self.noise_var > 0):
            raise ValueError("GaussianConjugate needs var > 0 and noise_var > 0")

    @property
    def family(self) -> RewardFamily:
        return RewardFamily("gaussian", self.noise_var)

    @property
    def mean(self) -> float:
        return float(self.mean0)

    def sample(self, rng, size):
        return self.mean0 + math.sqrt(self.var) * rng.standard_normal(size)

    def posterior_mean(self, n, s):
        n = np.asarray(n, dtype=float)
        s = np.asarray(s, dtype=float)
        return (self.mean0 / self.var + s / self.noise_var) / (1.0 / self.var + n / self.noise_var)

    def to_config(self):
        return {"kind": "gaussian", "mean": self.mean0, "var": self.var, "noise_var": self.noise_var}


@dataclass(frozen=True)
class BetaBernoulli(ArmPrior):
    """mu ~ Beta(alpha, beta), Bernoulli rewards."""

    alpha: float = 1.0
    beta: float = 1.0
    kind = "beta"

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("Beta parameters must be positive")

    @property
    def family(self):
        return BERNOULLI

    @property
    def mean(self):
        return self.alpha / (self.alpha + self.beta)

    def sample(self, rng, size):
        return rng.beta(self.alpha, self.beta, size)

    def posterior_mean(self, n, s):
        n = np.asarray(n, dtype=float)
        s = np.asarray(s, dtype=float)
        return (self.alpha + s) / (self.alpha + self.beta + n)

    def to_config(self):
        return {"kind": "beta", "alpha": self.alpha, "beta": self.beta}


class BoundedGrid(ArmPrior):
    """Discretised prior density on [0, 1] (or any finite grid).

    Posterior means are exact for the discretised prior: the grid weights are
    re-weighted by the likelihood and self-normalised.
    """

    kind = "grid"

    def __init__(self, points, weights, family: RewardFamily = BERNOULLI, label: str = "grid"):
        points = np.asarray(points, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if points.shape != weights.shape or points.ndim != 1 or points.size == 0:
            raise ValueError("grid points and weights must be matching 1-d arrays")
        if np.any(weights < 0) or not weights.sum() > 0:
            raise ValueError("grid weights must be nonnegative with positive mass")
        family.check_mean(points)
        self.points = points
        self.weights = weights / weights.sum()
        self.family = family
        self.label = label
        with np.errstate(divide="ignore"):
            self._logw = np.log(self.weights)
            self._logp = np.log(points)
            self._log1mp = np.log1p(-points) if family.kind == "bernoulli" else None

    @classmethod
    def uniform(cls, resolution: int = 1000, family: RewardFamily = BERNOULLI):
        pts = (np.arange(resolution) + 0.5) / resolution
        return cls(pts, np.ones(resolution), family, label="uniform")

    @classmethod
    def from_density(cls, density: Callable, resolution: int = 1000, family: RewardFamily = BERNOULLI,
                     label: str = "density"):
        pts = (np.arange(resolution) + 0.5) / resolution
        return cls(pts, density(pts), family, label=label)

    @classmethod
    def truncated_normal(cls, mean: float, sd: float, resolution: int = 512, family: RewardFamily = BERNOULLI):
        """N(mean, sd^2) restricted to [0, 1]."""
        grid = cls.from_density(lambda x: stats.norm.pdf(x, mean, sd), resolution, family, label="truncnorm")
        grid._params = (mean, sd, resolution)
        return grid

    @property
    def mean(self):
        return float(self.points @ self.weights)

    def sample(self, rng, size):
        return rng.choice(self.points, size=size, p=self.weights)

    _CACHE_MAX = 500_000

    def posterior_mean(self, n, s):
        n = np.asarray(n, dtype=float)
        s = np.asarray(s, dtype=float)
        shape = np.broadcast(n, s).shape
        nn = np.broadcast_to(n, shape).reshape(-1)
        ss = np.broadcast_to(s, shape).reshape(-1)
        if self.family.kind != "bernoulli":
            return self._posterior(nn, ss).reshape(shape)
        # Bernoulli data are integer (n, s) pairs that recur across phases and
        # replicates, so memoise them.
        cache = self.__dict__.setdefault("_cache", {})
        keys = list(zip(nn.tolist(), ss.tolist()))
        miss = [i for i, key in enumerate(keys) if key not in cache]
        if miss:
            if len(cache) > self._CACHE_MAX:
                cache.clear()
            vals = self._posterior(nn[miss], ss[miss])
            for i, v in zip(miss, vals.tolist()):
                cache[keys[i]] = v
        return np.array([cache[key] for key in keys], dtype=float).reshape(shape)

    def posterior_mean_scalar(self, n, s):
        if self.family.kind != "bernoulli":
            return float(self._posterior(np.array([n], dtype=float), np.array([s], dtype=float))[0])
        cache = self.__dict__.setdefault("_cache", {})
        key = (float(n), float(s))
        v = cache.get(key)
        if v is None:
            logw = self._logw.copy()
            if s > 0:
                logw += s * self._logp
            if n - s > 0:
                logw += (n - s) * self._log1mp
            top = logw.max()
            if not np.isfinite(top):
                raise DegenerateDataError("data has zero likelihood on the whole grid")
            w = np.exp(logw - top)
            v = float(w @ self.points / w.sum())
            if len(cache) > self._CACHE_MAX:
                cache.clear()
            cache[key] = v
        return v

    def _posterior(self, nn, ss):
        nn = nn.reshape(-1, 1)
        ss = ss.reshape(-1, 1)
        logw = self._logw[None, :] + self.family.loglik(self.points[None, :], nn, ss)
        top = logw.max(axis=1, keepdims=True)
        if np.any(~np.isfinite(top)):
            raise DegenerateDataError("data has zero likelihood on the whole grid")
        w = np.exp(logw - top)
        return (w @ self.points) / w.sum(axis=1)

    def to_config(self):
        cfg = {"kind": "grid", "family": self.family.kind}
        if getattr(self, "_params", None):
            mean, sd, res = self._params
            cfg.update({"shape": "truncnorm", "mean": mean, "sd": sd, "resolution": res})
        elif self.label == "uniform":
            cfg.update({"shape": "uniform", "resolution": self.points.size})
        else:
            cfg.update({"points": self.points.tolist(), "weights": self.weights.tolist()})
        if self.family.kind == "gaussian":
            cfg["noise_var"] = self.family.noise_var
        return cfg


@dataclass(frozen=True)
class PointMassPrior(ArmPrior):
    """Degenerate prior: mu is known to equal ``value``."""

    value: float
    family: RewardFamily = POINTMASS
    kind = "pointmass"

    def __post_init__(self):
        self.family.check_mean(self.value)

    @property
    def mean(self):
        return float(self.value)

    def sample(self, rng, size):
        return np.full(size, float(self.value))

    def posterior_mean(self, n, s):
        return np.full(np.broadcast(np.asarray(n), np.asarray(s)).shape, float(self.value))

    def to_config(self):
        return {"kind": "pointmass", "value": self.value, "family": self.family.kind}


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

class SampleSet:
    """Sufficient statistics (count, sum) of the rewards collected per arm.

    Used as the dataset of every posterior query.  ``cells`` is the number of
    arms (or arm-context cells for contextual priors).
    """

    def __init__(self, cells: int):
        self.counts = np.zeros(cells, dtype=np.int64)
        self.sums = np.zeros(cells, dtype=float)
        self.binary = np.ones(cells, dtype=bool)

    @classmethod
    def from_rewards(cls, cells: int, rewards: dict) -> "SampleSet":
        out = cls(cells)
        for cell, rs in rewards.items():
            out.add(cell, rs)
        return out

    def copy(self) -> "SampleSet":
        out = SampleSet(self.counts.size)
        out.counts = self.counts.copy()
        out.sums = self.sums.copy()
        out.binary = self.binary.copy()
        return out

    def add(self, cell: int, rewards) -> None:
        r = np.atleast_1d(np.asarray(rewards, dtype=float))
        self.counts[cell] += r.size
        self.sums[cell] += r.sum()
        if self.binary[cell] and not np.all((r == 0.0) | (r == 1.0)):
            self.binary[cell] = False

    def add_rounds(self, cells, rewards) -> None:
        cells = np.asarray(cells, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=float)
        size = self.counts.size
        self.counts += np.bincount(cells, minlength=size)
        self.sums += np.bincount(cells, weights=rewards, minlength=size)
        bad = ~((rewards == 0.0) | (rewards == 1.0))
        if bad.any():
            self.binary[np.unique(cells[bad])] = False

    def averages(self) -> np.ndarray:
        return np.divide(self.sums, self.counts, out=np.full(self.sums.shape, np.nan), where=self.counts > 0)


# ---------------------------------------------------------------------------
# Prior models
# ---------------------------------------------------------------------------

class PriorModel:
    """Common interface of independent and correlated priors."""

    independent: bool
    families: tuple[RewardFamily, ...]
    means: np.ndarray

    @property
    def m(self) -> int:
        return len(self.families)

    @property
    def bounded(self) -> bool:
        return all(f.bounded for f in self.families)

    def _check_order(self, allow_unordered: bool, tol: float = 1e-12) -> None:
        self.ordered = bool(np.all(np.diff(self.means) <= tol))
        if not allow_unordered and not self.ordered:
            raise ArmOrderError(
                f"prior means must be non-increasing in the arm index, got {np.round(self.means, 6).tolist()}"
            )

    def require_ordered(self) -> None:
        if not self.ordered:
            raise ArmOrderError("this operation needs arms ordered by prior mean")

    def sample_means(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def posterior_means_batch(self, counts, sums) -> np.ndarray:
        raise NotImplementedError

    def posterior_means(self, data: SampleSet) -> np.ndarray:
        for i, fam in enumerate(self.families):
            if fam.kind == "bernoulli" and not data.binary[i]:
                raise ValueError(f"Bernoulli arm {i} received a reward outside {{0, 1}}")
        if self.independent:
            return np.array([a.posterior_mean_scalar(n, s)
                             for a, n, s in zip(self.arms, data.counts.tolist(), data.sums.tolist())])
        return self.posterior_means_batch(data.counts[None, :], data.sums[None, :])[0]

    def sample_reward_sums(self, mu: np.ndarray, k, rng) -> np.ndarray:
        """Sums of k[j] rewards of every arm j for each row of ``mu``."""
        k = np.broadcast_to(np.asarray(k), (self.m,))
        out = np.zeros_like(mu)
        for j, fam in enumerate(self.families):
            if k[j]:
                out[:, j] = fam.sample_sum(mu[:, j], int(k[j]), rng)
        return out


class IndependentPrior(PriorModel):
    """Product prior over arms."""

    independent = True

    def __init__(self, arms: Sequence[ArmPrior], allow_unordered: bool = False):
        if len(arms) < 1:
            raise ValueError("a prior needs at least one arm")
        self.arms = tuple(arms)
        self.families = tuple(a.family for a in self.arms)
        self.means = np.array([a.mean for a in self.arms])
        self._check_order(allow_unordered)

    @classmethod
    def ordered_from(cls, arms: Sequence[ArmPrior]) -> tuple["IndependentPrior", list[int]]:
        """Relabel arms by decreasing prior mean (stable); returns the prior
        and the original index of each new arm."""
        order = sorted(range(len(arms)), key=lambda i: -arms[i].mean)
        return cls([arms[i] for i in order]), order

    def sample_means(self, rng, size):
        return np.column_stack([a.sample(rng, size) for a in self.arms])

    def posterior_means_batch(self, counts, sums):
        counts = np.asarray(counts)
        sums = np.asarray(sums)
        return np.column_stack(
            [a.posterior_mean(counts[:, i], sums[:, i]) for i, a in enumerate(self.arms)]
        )

    def to_config(self) -> dict:
        return {"arms": [a.to_config() for a in self.arms]}


class JointPrior(PriorModel):
    """Correlated prior given by a joint sampler of the mean vector.

    Posterior means use self-normalised importance sampling with the prior
    as proposal over ``n_draws`` cached draws.
    """

    independent = False

    def __init__(self, sampler: Callable[[np.random.Generator, int], np.ndarray],
                 families: Sequence[RewardFamily], means=None, n_draws: int = 20000, seed: int = 0,
                 allow_unordered: bool = False, name: str = "joint", params: dict | None = None,
                 ess_floor: float = 100.0):
        self.sampler = sampler
        self.families = tuple(families)
        self.name = name
        self.params = params or {}
        self.ess_floor = ess_floor
        self._draws = np.asarray(sampler(np.random.default_rng(seed), n_draws), dtype=float)
        if self._draws.shape != (n_draws, len(self.families)):
            raise ValueError("joint sampler returned the wrong shape")
        for j, fam in enumerate(self.families):
            fam.check_mean(self._draws[:, j])
        self.means = np.asarray(means, dtype=float) if means is not None else self._draws.mean(axis=0)
        self._check_order(allow_unordered, tol=1e-9 if means is not None else 1e-2)

    def sample_means(self, rng, size):
        return np.asarray(self.sampler(rng, size), dtype=float)

    def posterior_means_batch(self, counts, sums, chunk: int = 128):
        counts = np.asarray(counts, dtype=float)
        sums = np.asarray(sums, dtype=float)
        out = np.empty(counts.shape)
        for lo in range(0, counts.shape[0], chunk):
            c = counts[lo:lo + chunk]
            s = sums[lo:lo + chunk]
            logw = np.zeros((c.shape[0], self._draws.shape[0]))
            for j, fam in enumerate(self.families):
                if np.any(c[:, j] > 0):
                    logw += fam.loglik(self._draws[None, :, j], c[:, j:j + 1], s[:, j:j + 1])
            top = logw.max(axis=1, keepdims=True)
            if np.any(~np.isfinite(top)):
                raise DegenerateDataError("data has zero likelihood under every prior draw")
            w = np.exp(logw - top)
            wsum = w.sum(axis=1)
            ess = wsum**2 / (w**2).sum(axis=1)
            if np.any(ess < self.ess_floor):
                warnings.warn(f"importance-sampling ESS {ess.min():.1f} below {self.ess_floor}", RuntimeWarning)
            out[lo:lo + chunk] = (w @ self._draws) / wsum[:, None]
        return out

    def to_config(self) -> dict:
        return {"joint": self.name, **self.params}


def offset_prior(offset: float = 0.2, low: float = 0.2, high: float = 1.0,
                 family: RewardFamily = BERNOULLI, **kwargs) -> JointPrior:
    """mu_0 ~ U[low, high] and mu_1 = mu_0 - offset exactly.

    Arm 1 is never better than arm 0, so no BIC algorithm can recommend it.
    """

    def sampler(rng, size):
        top = rng.uniform(low, high, size)
        return np.column_stack([top, top - offset])

    mid = 0.5 * (low + high)
    return JointPrior(sampler, [family, family], means=[mid, mid - offset], name="offset",
                      params={"offset": offset, "low": low, "high": high, "family": family.kind}, **kwargs)


def posterior_mean(prior: PriorModel, data: SampleSet, arm: int) -> float:
    """E[mu_arm | data]."""
    return float(prior.posterior_means(data)[arm])


def argmax_lowest(values) -> int:
    """Index of the maximum, ties to the lowest index."""
    return int(np.argmax(np.asarray(values)))


# ---------------------------------------------------------------------------
# Gaussian closed forms
# ---------------------------------------------------------------------------

def xk_distribution(prior: IndependentPrior, k: int) -> tuple[float, float]:
    """Mean and variance of E[mu_1 - mu_0 | k samples of arm 0] for two
    independent Gaussian-conjugate arms."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    a0, a1 = prior.arms[0], prior.arms[1]
    if not (isinstance(a0, GaussianConjugate) and isinstance(a1, GaussianConjugate)):
        raise TypeError("xk_distribution needs Gaussian-conjugate arms")
    var = a0.var * (k * a0.var) / (a0.noise_var + k * a0.var)
    return a1.mean0 - a0.mean0, var


def positive_part_mean(mean: float, var: float) -> float:
    """E[Y 1{Y > 0}] for Y ~ N(mean, var)."""
    if var <= 0:
        return max(mean, 0.0)
    s = math.sqrt(var)
    return mean * stats.norm.cdf(mean / s) + s * stats.norm.pdf(mean / s)


# ---------------------------------------------------------------------------
# Persuasion constants
# ---------------------------------------------------------------------------

TAU_GRID = np.geomspace(1e-3, 1.0, 50)


@dataclass
class PersuasionConstants:
    k_P: int
    tau_P: float
    rho_P: float
    replicates: int = 0
    confidence: float = 0.95
    tau_grid: np.ndarray = field(default_factory=lambda: TAU_GRID.copy(), repr=False)
    curves: dict = field(default_factory=dict, repr=False)
    L_P: int | None = None

    def __post_init__(self):
        if not (self.tau_P > 0 and self.rho_P > 0 and self.k_P >= 1):
            raise ValueError("persuasion constants need tau_P > 0, rho_P > 0, k_P >= 1")

    def to_dict(self) -> dict:
        out = {"k_P": self.k_P, "tau_P": self.tau_P, "rho_P": self.rho_P,
               "replicates": self.replicates, "ci_level": self.confidence}
        if self.L_P is not None:
            out["L_P"] = self.L_P
        return out


def persuasion_statistic(prior: PriorModel, target: int, counts, rng, replicates: int) -> np.ndarray:
    """Monte-Carlo draws of min_{j != target} E[mu_target - mu_j | data],
    where the data holds ``counts[j]`` samples of arm j."""
    counts = np.broadcast_to(np.asarray(counts, dtype=np.int64), (prior.m,))
    mu = prior.sample_means(rng, replicates)
    sums = prior.sample_reward_sums(mu, counts, rng)
    pm = prior.posterior_means_batch(np.broadcast_to(counts, mu.shape), sums)
    others = np.delete(pm, target, axis=1)
    return pm[:, target] - others.max(axis=1)


def _persuasion_targets(m: int, k: int, stage: str):
    if stage not in ("sampling", "simulation", "both"):
        raise ValueError("stage must be 'sampling', 'simulation' or 'both'")
    targets = []
    if stage in ("sampling", "both"):
        for i in range(1, m):
            counts = np.where(np.arange(m) < i, k, 0)
            targets.append((f"sampling:{i}", i, counts))
    if stage in ("simulation", "both"):
        for i in range(m):
            targets.append((f"simulation:{i}", i, np.full(m, k)))
    return targets


def select_persuasion_pair(curves: dict, replicates: int, k: int, confidence: float,
                           tau_grid=TAU_GRID, floor: float = 1e-4) -> PersuasionConstants:
    """Choose (tau, rho) maximising tau * min-over-arms Wilson lower bound."""
    hits = np.array([c for c in curves.values()])
    lcb, _ = wilson_interval(hits, replicates, confidence)
    lcb = np.atleast_2d(lcb)
    rho_hat = hits / replicates
    worst_lcb = lcb.min(axis=0)
    worst_hat = rho_hat.min(axis=0)
    feasible = (worst_hat >= floor) & (worst_lcb > 0)
    if not feasible.any():
        raise PriorNotPersuadable(
            f"no tau in [{tau_grid[0]:g}, {tau_grid[-1]:g}] has Pr[X > tau] bounded away from 0 for every arm"
        )
    score = np.where(feasible, tau_grid * worst_lcb, -np.inf)
    best = int(np.argmax(score))
    return PersuasionConstants(
        k_P=k, tau_P=float(tau_grid[best]), rho_P=float(worst_lcb[best]), replicates=replicates,
        confidence=confidence, tau_grid=np.asarray(tau_grid),
        curves={key: np.asarray(v) / replicates for key, v in curves.items()},
    )


def estimate_persuasion_constants(prior: PriorModel, k: int, replicates: int = 10_000,
                                  confidence: float = 0.95, rng: np.random.Generator | None = None,
                                  stage: str = "both", tau_grid=TAU_GRID) -> PersuasionConstants:
    """Monte-Carlo estimate of (k_P, tau_P, rho_P).

    ``stage="sampling"`` checks each arm i >= 1 after k samples of the arms
    below it; ``"simulation"`` checks every arm after k samples of all arms;
    ``"both"`` takes the worst case over the two.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if replicates < 1000:
        raise ValueError("need at least 1000 replicates")
    rng = rng if rng is not None else np.random.default_rng(0)
    tau_grid = np.asarray(tau_grid, dtype=float)
    curves = {}
    for key, target, counts in _persuasion_targets(prior.m, k, stage):
        x = persuasion_statistic(prior, target, counts, rng, replicates)
        curves[key] = (x[:, None] > tau_grid[None, :]).sum(axis=0)
    return select_persuasion_pair(curves, replicates, k, confidence, tau_grid)


def persuasion_gain(prior: PriorModel, target: int, counts, tau: float, rng, replicates: int = 20_000):
    """(estimate, standard error) of E[X 1{X > tau}] for the persuasion
    statistic of ``target`` given ``counts`` samples per arm."""
    x = persuasion_statistic(prior, target, counts, rng, replicates)
    g = np.where(x > tau, x, 0.0)
    return float(g.mean()), float(g.std(ddof=1) / math.sqrt(replicates))


# ---------------------------------------------------------------------------
# Phase lengths
# ---------------------------------------------------------------------------

def min_phase_length_two_arm(prior: PriorModel, k_P: int, replicates: int = 200_000,
                             confidence: float = 0.95, rng: np.random.Generator | None = None) -> int:
    """Smallest integer L with L >= max(k_P, 1 + (mu_0^0 - mu_1^0) / E[Y 1{Y>0}]),
    Y = E[mu_1 - mu_0 | k_P samples of arm 0]."""
    if prior.m != 2:
        raise ValueError("two-arm phase length needs exactly two arms")
    prior.require_ordered()
    gap = float(prior.means[0] - prior.means[1])
    if gap <= 0:
        return max(int(k_P), 1)
    arms = getattr(prior, "arms", ())
    if prior.independent and all(isinstance(a, GaussianConjugate) for a in arms):
        mean, var = xk_distribution(prior, k_P)
        pos = positive_part_mean(mean, var)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        y = persuasion_statistic(prior, 1, [k_P, 0], rng, replicates)
        g = np.maximum(y, 0.0)
        pos = g.mean() - z_value(confidence) * g.std(ddof=1) / math.sqrt(replicates)
    if not pos > 0:
        raise PriorNotPersuadable("E[Y 1{Y > 0}] is not positive")
    return ceil_int(max(k_P, 1 + gap / pos))


def expected_max_mean(prior: PriorModel, rng: np.random.Generator | None = None,
                      replicates: int = 1_000_000, chunk: int = 200_000) -> tuple[float, float]:
    """Monte-Carlo (estimate, standard error) of E[max_i mu_i]."""
    rng = rng if rng is not None else np.random.default_rng(0)
    total = total_sq = 0.0
    done = 0
    while done < replicates:
        n = min(chunk, replicates - done)
        mx = prior.sample_means(rng, n).max(axis=1)
        total += mx.sum()
        total_sq += (mx * mx).sum()
        done += n
    mean = total / replicates
    var = max(total_sq / replicates - mean * mean, 0.0) * replicates / max(replicates - 1, 1)
    return mean, math.sqrt(var / replicates)


def min_phase_length_m_arm(prior: PriorModel, constants: PersuasionConstants,
                           rng: np.random.Generator | None = None, replicates: int = 1_000_000,
                           confidence: float = 0.95) -> int:
    """ceil(2 + (E[max mu] - mu_{m-1}^0) / (tau_P rho_P)), with an upper
    confidence bound on E[max mu]."""
    tr = constants.tau_P * constants.rho_P
    if not tr > 1e-12:
        raise PriorNotPersuadable("tau_P * rho_P is zero")
    mx, se = expected_max_mean(prior, rng, replicates)
    upper = mx + z_value(confidence) * se
    return ceil_int(2 + (upper - prior.means[-1]) / tr)


# ---------------------------------------------------------------------------
# Detail-free thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoArmDFThresholds:
    C: float
    beta: float
    k_star: int
    L: int


def df_two_arm_thresholds(mu0_prior: float, mu1_prior: float, lam: float, cdf_point: float) -> TwoArmDFThresholds:
    """Two-arm detail-free sampling thresholds with C = lam * mu_1^0.

    ``cdf_point`` is Pr[mu_0 / mu_1^0 <= 1 - 3 lam / 2].
    """
    if not 0 < lam < 2 / 3:
        raise ValueError("lambda must lie in (0, 2/3)")
    if not mu1_prior > 0:
        raise ValueError("needs a positive prior mean for the second arm")
    if not cdf_point > 0:
        raise PriorNotPersuadable("zero probability for the exploration event")
    C = lam * mu1_prior
    beta = C * cdf_point
    k_star = ceil_int(2 * C**-2 * math.log(4 / beta))
    L = ceil_int(1 + 8 * (mu0_prior - mu1_prior) / beta)
    return TwoArmDFThresholds(C, beta, k_star, L)


def df_m_arm_thresholds(mu_top_prior: float, mu_low_prior: float, C: float, event_prob: float, m: int):
    """(k, L) for the m-arm detail-free sampling stage."""
    if not event_prob > 0:
        raise PriorNotPersuadable("zero probability for the exploration event")
    if not C > 0:
        raise ValueError("C must be positive")
    k = ceil_int(8 * C**-2 * math.log(8 * m / (C * event_prob)))
    L = ceil_int(1 + 2 * (mu_top_prior - mu_low_prior) / (C * event_prob))
    return k, L


def racing_thresholds(tau: float, min_prob: float, T: int):
    """(theta_tau, k) for the racing stage: theta_tau = (4/tau)/min_prob and
    k = ceil(theta_tau^2 log T)."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if not min_prob > 0:
        raise PriorNotPersuadable("some arm is never best by margin tau")
    theta = (4 / tau) / min_prob
    return theta, ceil_int(theta**2 * math.log(T))


@dataclass(frozen=True)
class DetailFreeThresholds:
    C: float
    k: int
    L: int
    theta: float
    k_race: int
    N_P: int
    event_prob: float
    race_prob: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def detail_free_thresholds(prior_means, T: int, tau: float, event_prob: float, race_prob: float,
                           C: float | None = None) -> DetailFreeThresholds:
    """All four thresholds of the detail-free algorithm and their maximum N_P.

    ``C`` defaults to mu_{m-1}^0 / 6, the choice used with a single master
    parameter.
    """
    means = np.asarray(prior_means, dtype=float)
    m = means.size
    if not means[-1] > 0:
        raise ValueError("the lowest prior mean must be positive")
    C = means[-1] / 6 if C is None else C
    k, L = df_m_arm_thresholds(means[0], means[-1], C, event_prob, m)
    theta, k_race = racing_thresholds(tau, race_prob, T)
    N_P = max(k, L, ceil_int(theta), k_race)
    return DetailFreeThresholds(C, k, L, theta, k_race, N_P, event_prob, race_prob)


def prob_df_event(prior: PriorModel, C: float, rng=None, replicates: int = 200_000, confidence: float = 0.95):
    """(estimate, lower bound) of Pr[mu_0 + 3C/2 <= mu_j for 0 < j < m-1, and
    max_{j < m-1} mu_j <= mu_{m-1}^0 - 3C/2]."""
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = prior.sample_means(rng, replicates)
    m = prior.m
    ok = mu[:, : m - 1].max(axis=1) <= prior.means[-1] - 1.5 * C
    if m > 2:
        ok &= np.all(mu[:, 0:1] + 1.5 * C <= mu[:, 1 : m - 1], axis=1)
    hits = int(ok.sum())
    lo, _ = wilson_interval(hits, replicates, confidence)
    return hits / replicates, lo


def prob_race_margin(prior: PriorModel, tau: float, rng=None, replicates: int = 200_000,
                     confidence: float = 0.95):
    """(estimate, lower bound) of min_i Pr[mu_i - max_{j != i} mu_j >= tau]."""
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = prior.sample_means(rng, replicates)
    hits = []
    for i in range(prior.m):
        others = np.delete(mu, i, axis=1).max(axis=1)
        hits.append(int(np.sum(mu[:, i] - others >= tau)))
    h = min(hits)
    lo, _ = wilson_interval(h, replicates, confidence)
    return h / replicates, lo


def prob_two_arm_cdf(prior: PriorModel, lam: float, rng=None, replicates: int = 200_000,
                     confidence: float = 0.95):
    """(estimate, lower bound) of Pr[mu_0 / mu_1^0 <= 1 - 3 lam / 2]."""
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = prior.sample_means(rng, replicates)
    hits = int(np.sum(mu[:, 0] / prior.means[1] <= 1 - 1.5 * lam))
    lo, _ = wilson_interval(hits, replicates, confidence)
    return hits / replicates, lo


def estimate_detail_free_thresholds(prior: PriorModel, T: int, tau: float = 0.2, rng=None,
                                    replicates: int = 200_000, confidence: float = 0.95) -> DetailFreeThresholds:
    """Thresholds with Monte-Carlo lower confidence bounds for both probabilities."""
    if not prior.independent or not prior.bounded:
        raise ValueError("detail-free thresholds need an independent prior with rewards in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    C = prior.means[-1] / 6
    _, ev = prob_df_event(prior, C, rng, replicates, confidence)
    _, rp = prob_race_margin(prior, tau, rng, replicates, confidence)
    return detail_free_thresholds(prior.means, T, tau, ev, rp, C)


# ---------------------------------------------------------------------------
# Concentration bounds
# ---------------------------------------------------------------------------

def chernoff_required_k(C: float, zeta: float, kappa: float, tail_prob: float) -> int:
    """Samples needed so that E[X | xhat >= C] Pr[xhat >= C] is bounded below
    given Pr[X >= (1 + zeta) C] = tail_prob."""
    for name, v in (("C", C), ("zeta", zeta), ("kappa", kappa)):
        if not 0 < v < 1:
            raise ValueError(f"{name} must lie in (0, 1)")
    if not tail_prob > 0:
        raise ValueError("tail probability must be positive")
    return ceil_int(-math.log(kappa * (1 - zeta) * C * tail_prob) / (2 * zeta**2 * C**2))


def hoeffding_tail(n: int, delta: float) -> float:
    """2 exp(-2 n delta^2): bound on Pr[|mean - mu| >= delta] for n draws in [0, 1]."""
    return 2.0 * math.exp(-2.0 * n * delta * delta)
