"""Contextual extension: finite context spaces, arm-ranks, the contextual
black-box reduction with auxiliary feedback, and policy-class regret.

Mean rewards form a matrix mu[a, x].  Posterior queries run on a flat cell
prior whose cell ``a * n_contexts + x`` holds mu[a, x]; a rank-sample
(x, a, r, f) is stored as a sample of that cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .baselines import BanditAlgorithm, Environment, ProtocolChecked
from .bic_core import ReductionConfig, prediction_for_round
from .metrics import RegretCurve
from .model import MabInstance, RewardFamily, Transcript, TranscriptBuilder, derive_stream
from .priors import (TAU_GRID, ArmPrior, IndependentPrior, JointPrior, PersuasionConstants, PriorModel,
                     SampleSet, select_persuasion_pair)
from .stats import ceil_int


@dataclass(frozen=True)
class ContextSpace:
    """Contexts 0..n-1 drawn from a categorical distribution."""

    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("context space must be nonempty")
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-9):
            raise ValueError("context probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))

    @classmethod
    def uniform(cls, n: int) -> "ContextSpace":
        return cls(tuple([1.0 / n] * n))

    @property
    def size(self) -> int:
        return len(self.probs)

    def check(self, x: int) -> int:
        if not 0 <= int(x) < self.size:
            raise ValueError(f"unknown context {x}")
        return int(x)


class ContextualPrior:
    """Prior over the mean matrix mu[a, x] with a per-arm reward family and
    an optional feedback family (callable ``(mu, rng) -> tokens``)."""

    def __init__(self, cells: PriorModel, m: int, space: ContextSpace, means=None,
                 feedback: Callable | None = None):
        X = space.size
        if cells.m != m * X:
            raise ValueError("cell prior must have m * n_contexts cells")
        self.cells = cells
        self.m = m
        self.space = space
        self.feedback = feedback
        self.prior_means = (np.asarray(means, dtype=float) if means is not None
                            else np.asarray(cells.means, dtype=float).reshape(m, X))
        self.families = tuple(cells.families[a * X] for a in range(m))
        # ranks[x, i] = arm with rank i in context x (stable: ties by arm index)
        self.ranks = np.stack([np.argsort(-self.prior_means[:, x], kind="stable") for x in range(X)])

    @classmethod
    def independent(cls, arm_priors: Sequence[Sequence[ArmPrior]], space: ContextSpace, feedback=None):
        """``arm_priors[a][x]`` is the marginal of mu[a, x]."""
        m = len(arm_priors)
        if any(len(row) != space.size for row in arm_priors):
            raise ValueError("need one cell prior per (arm, context)")
        flat = [arm_priors[a][x] for a in range(m) for x in range(space.size)]
        return cls(IndependentPrior(flat, allow_unordered=True), m, space, feedback=feedback)

    @classmethod
    def context_free(cls, arms: Sequence[ArmPrior], space: ContextSpace, feedback=None):
        """Same marginal for every context (drawn independently per context)."""
        return cls.independent([[a] * space.size for a in arms], space, feedback)

    @classmethod
    def joint(cls, sampler: Callable, families: Sequence[RewardFamily], means, space: ContextSpace,
              feedback=None, **kwargs):
        """``sampler(rng, size)`` returns draws of shape (size, m, n_contexts)."""
        means = np.asarray(means, dtype=float)
        m, X = means.shape
        flat_fam = [families[a] for a in range(m) for _ in range(X)]
        jp = JointPrior(lambda rng, n: np.asarray(sampler(rng, n)).reshape(n, m * X), flat_fam,
                        means=means.ravel(), allow_unordered=True, **kwargs)
        return cls(jp, m, space, means=means, feedback=feedback)

    @property
    def n_contexts(self) -> int:
        return self.space.size

    def cell(self, arm, x):
        return np.asarray(arm) * self.n_contexts + np.asarray(x)

    def sample_means(self, rng, size: int) -> np.ndarray:
        return self.cells.sample_means(rng, size).reshape(size, self.m, self.n_contexts)

    def posterior_means(self, data: SampleSet) -> np.ndarray:
        return self.cells.posterior_means(data).reshape(self.m, self.n_contexts)

    def exploit_arms(self, data: SampleSet) -> np.ndarray:
        """a*_x(S) for every context x (ties to the lowest arm index)."""
        return np.argmax(self.posterior_means(data), axis=0)

    def environment(self, seed: int, replicate: int = 0) -> Environment:
        mu = self.sample_means(derive_stream(seed, replicate, "instance"), 1)[0]
        return Environment(MabInstance(mu), self.families, seed, replicate,
                           context_probs=self.space.probs, feedback=self.feedback)


def arm_rank(prior: ContextualPrior, x: int) -> tuple:
    """sigma(x, .): arms by prior mean descending, ties by arm index."""
    x = prior.space.check(x)
    return tuple(int(a) for a in prior.ranks[x])


def offset_contextual_prior(space: ContextSpace, offset: float = 0.2, low: float = 0.2, high: float = 1.0,
                            family: RewardFamily | None = None, **kwargs) -> ContextualPrior:
    """Two arms per context; mu[1, x] = mu[0, x] - offset exactly."""
    from .model import BERNOULLI

    family = family or BERNOULLI
    X = space.size

    def sampler(rng, n):
        top = rng.uniform(low, high, (n, X))
        return np.stack([top, top - offset], axis=1)

    mid = 0.5 * (low + high)
    means = np.array([[mid] * X, [mid - offset] * X])
    return ContextualPrior.joint(sampler, [family, family], means, space, **kwargs)


# ---------------------------------------------------------------------------
# Reduction
# ---------------------------------------------------------------------------

def contextual_sampling_length(m: int, k: int, L: int, rank1_phase: bool = True) -> int:
    return k + (m if rank1_phase else m - 1) * L * k


def run_contextual_reduction(prior: ContextualPrior, cfg: ReductionConfig, algorithm: BanditAlgorithm,
                             env: Environment, rng=None, rank1_phase: bool = True) -> Transcript:
    """Contextual black-box reduction.

    Sampling stage: k rounds of arm-rank 1, then one phase of kL rounds per
    arm-rank (starting at rank 1 when ``rank1_phase``, else at rank 2) in
    which a uniform k-subset gets that rank and everyone else the per-context
    exploit arm.  Simulation stage: phases of L rounds, one uniformly chosen
    agent per phase forwarded with her context to the wrapped algorithm.
    """
    if env.context_probs is None:
        raise ValueError("the contextual reduction needs a contextual environment")
    k, L, T = cfg.k, cfg.L, cfg.T
    m = prior.m
    c = contextual_sampling_length(m, k, L, rank1_phase)
    if T is None or T < c:
        raise ValueError(f"T must cover the sampling stage ({c} rounds)")
    rng = rng if rng is not None else env.stream("slots")
    alg = algorithm if isinstance(algorithm, ProtocolChecked) else ProtocolChecked(algorithm)
    ranks = prior.ranks
    has_fb = env.feedback_fn is not None
    b = TranscriptBuilder(with_context=True, with_feedback=has_fb, with_prediction=True)
    data = SampleSet(m * prior.n_contexts)

    xs = env.contexts(k)
    recs = ranks[xs, 0]
    rewards = env.rewards(recs, xs)
    b.extend(recs, rewards, "initial", contexts=xs, feedback=env.feedback(recs, xs))
    data.add_rounds(prior.cell(recs, xs), rewards)

    for i in range(0 if rank1_phase else 1, m):
        exploit = prior.exploit_arms(data)
        q = rng.choice(L * k, size=k, replace=False)
        xs = env.contexts(L * k)
        recs = exploit[xs]
        recs[q] = ranks[xs[q], i]
        rewards = env.rewards(recs, xs)
        b.extend(recs, rewards, f"sampling:{i}", contexts=xs, feedback=env.feedback(recs, xs))
        data.add_rounds(prior.cell(recs[q], xs[q]), rewards[q])

    phis: list = []
    dedicated: list[int] = []
    n_full, rest = divmod(T - c, L)
    for n in range(1, n_full + 1):
        exploit = prior.exploit_arms(data)
        p = int(rng.integers(L))
        x_p = int(env.contexts(1, "dedicated-contexts")[0])
        arm = alg.next_arm(context=x_p)
        phis.append(alg.predict())
        others = np.flatnonzero(np.arange(L) != p)
        xs = np.empty(L, dtype=np.int64)
        xs[others] = env.contexts(L - 1)
        xs[p] = x_p
        recs = exploit[xs]
        rewards = np.empty(L)
        rewards[others] = env.rewards(recs[others], xs[others])
        recs[p] = arm
        rewards[p] = env.reward(arm, x_p, stream="dedicated")
        fb = None
        if has_fb:
            fb = [None] * L
            for j, f in zip(others, env.feedback(recs[others], xs[others])):
                fb[j] = f
            fb[p] = env.feedback([arm], [x_p], "dedicated-feedback")[0]
        alg.observe(arm, rewards[p], feedback=None if fb is None else fb[p], context=x_p)
        data.add_rounds(prior.cell(recs, xs), rewards)
        start = c + (n - 1) * L
        preds = [prediction_for_round(start + s, c, L, phis) for s in range(1, L + 1)]
        b.extend(recs, rewards, f"simulation:{n}", contexts=xs, feedback=fb, predictions=preds)
        dedicated.append(start + p + 1)
    if rest:
        exploit = prior.exploit_arms(data)
        xs = env.contexts(rest)
        recs = exploit[xs]
        start = c + n_full * L
        preds = [prediction_for_round(start + s, c, L, phis) for s in range(1, rest + 1)]
        b.extend(recs, env.rewards(recs, xs), "tail", contexts=xs, feedback=env.feedback(recs, xs),
                 predictions=preds)
    return b.build(env.instance, env.seed, env.replicate, algorithm="contextual-reduction", k=k, L=L, T=T,
                   c=c, dedicated=dedicated, rank1_phase=rank1_phase)


# ---------------------------------------------------------------------------
# Persuasion constants
# ---------------------------------------------------------------------------

def _rank_sample_stats(prior: ContextualPrior, mu: np.ndarray, ranks_used, k: int, rng):
    """Counts and sums per cell after k rank-samples of each rank in ``ranks_used``."""
    R = mu.shape[0]
    X = prior.n_contexts
    ncell = prior.m * X
    counts = np.zeros((R, ncell))
    sums = np.zeros((R, ncell))
    flat_mu = mu.reshape(R, ncell)
    rows = np.repeat(np.arange(R), k)
    for r in ranks_used:
        xs = rng.choice(X, size=(R, k), p=prior.space.probs)
        arms = prior.ranks[xs, r]
        cells = arms * X + xs
        u = rng.random((R, k))
        rewards = np.empty((R, k))
        for a in range(prior.m):
            sel = arms == a
            if sel.any():
                rewards[sel] = prior.families[a].from_uniform(flat_mu[np.nonzero(sel)[0], cells[sel]], u[sel])
        np.add.at(counts, (rows, cells.ravel()), 1.0)
        np.add.at(sums, (rows, cells.ravel()), rewards.ravel())
    return counts, sums


def contextual_persuasion_statistic(prior: ContextualPrior, rank: int, data_ranks, k: int, rng,
                                    replicates: int) -> np.ndarray:
    """Draws of X_(i,j,x): rank ``rank`` against every other arm for a fresh
    context x, given k rank-samples of each rank in ``data_ranks``."""
    mu = prior.sample_means(rng, replicates)
    counts, sums = _rank_sample_stats(prior, mu, data_ranks, k, rng)
    pm = prior.cells.posterior_means_batch(counts, sums).reshape(replicates, prior.m, prior.n_contexts)
    x = rng.choice(prior.n_contexts, size=replicates, p=prior.space.probs)
    rows = np.arange(replicates)
    arm_i = prior.ranks[x, rank]
    col = pm[rows, :, x]
    own = col[rows, arm_i]
    col = col.copy()
    col[rows, arm_i] = -np.inf
    return own - col.max(axis=1)


def estimate_contextual_persuasion(prior: ContextualPrior, k: int, replicates: int = 10_000,
                                   confidence: float = 0.95, rng=None, tau_grid=TAU_GRID) -> PersuasionConstants:
    """Monte-Carlo (k_P, tau_P, rho_P) over arm-ranks i and j in {i-1, m},
    plus L_P = 1 + max_x max_{a, a'} (mu0[a, x] - mu0[a', x]) / (tau_P rho_P).

    Rank 1 is checked only with j = m: with j = 0 there is no data and its
    statistic is the constant prior gap, which is never positive.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if replicates < 1000:
        raise ValueError("need at least 1000 replicates")
    rng = rng if rng is not None else np.random.default_rng(0)
    tau_grid = np.asarray(tau_grid, dtype=float)
    m = prior.m
    curves = {}
    for i in range(m):
        pairs = [("all", list(range(m)))]
        if i >= 1:
            pairs.insert(0, ("prev", list(range(i))))
        for tag, used in pairs:
            x = contextual_persuasion_statistic(prior, i, used, k, rng, replicates)
            curves[f"rank{i}:{tag}"] = (x[:, None] > tau_grid[None, :]).sum(axis=0)
    const = select_persuasion_pair(curves, replicates, k, confidence, tau_grid)
    spread = float((prior.prior_means.max(axis=0) - prior.prior_means.min(axis=0)).max())
    const.L_P = ceil_int(1 + spread / (const.tau_P * const.rho_P))
    return const


# ---------------------------------------------------------------------------
# Policies and regret
# ---------------------------------------------------------------------------

class PolicyClass:
    """Finite list of policies, each a total context -> arm table."""

    def __init__(self, table, m: int, n_contexts: int):
        arr = np.asarray(table)
        if arr.ndim != 2 or arr.shape[1] != n_contexts or arr.shape[0] == 0:
            raise ValueError("policy is not total: need one arm per context for every policy")
        if not np.issubdtype(arr.dtype, np.integer) and not np.all(np.isfinite(arr)):
            raise ValueError("policy is not total: missing entries")
        arr = arr.astype(np.int64)
        if np.any(arr < 0) or np.any(arr >= m):
            raise ValueError("policy maps a context to an unknown arm")
        self.table = arr
        self.m = m

    @classmethod
    def all_policies(cls, m: int, n_contexts: int) -> "PolicyClass":
        return cls(list(itertools.product(range(m), repeat=n_contexts)), m, n_contexts)

    @classmethod
    def constant(cls, m: int, n_contexts: int) -> "PolicyClass":
        return cls([[a] * n_contexts for a in range(m)], m, n_contexts)

    def __len__(self):
        return len(self.table)

    def values(self, means: np.ndarray, probs) -> np.ndarray:
        """E_x[mu(pi(x), x)] for every policy."""
        X = means.shape[1]
        return (means[self.table, np.arange(X)[None, :]] * np.asarray(probs)[None, :]).sum(axis=1)


def contextual_regret(transcripts: Sequence[Transcript], probs, policies: PolicyClass,
                      confidence: float = 0.95, keep: bool = False) -> RegretCurve:
    """t * max_pi E_x[mu(pi(x), x)] - sum_{s <= t} mu(I_s, x_s), averaged over replicates."""
    if len(policies) == 0:
        raise ValueError("empty policy class")
    rows = []
    for tr in transcripts:
        mu = tr.instance.means
        if mu.ndim == 1:
            mu = mu[:, None]
        ctx = tr.context if tr.context is not None else np.zeros(len(tr), dtype=np.int64)
        best = policies.values(mu, probs).max()
        got = mu[tr.recommendation, ctx]
        rows.append(np.arange(1, len(tr) + 1) * best - np.cumsum(got))
    return RegretCurve.from_matrix(np.stack(rows), confidence, keep)
