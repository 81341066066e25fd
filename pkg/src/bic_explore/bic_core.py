"""Prior-dependent BIC algorithms: the two-arm sampler, the m-arm sampling
stage and the black-box reduction's simulation stage.

Phase labels written into the transcript name the structural role of each
round; the audit pools rounds with equal labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import BanditAlgorithm, Environment, ProtocolChecked
from .model import NULL_PREDICTION, Transcript, TranscriptBuilder, concat_transcripts
from .priors import PriorModel, SampleSet, argmax_lowest


@dataclass(frozen=True)
class ReductionConfig:
    k: int
    L: int
    T: int | None = None

    def __post_init__(self):
        if self.k < 1 or self.L < 1:
            raise ValueError("k and L must be >= 1")

    def sampling_length(self, m: int) -> int:
        return self.k + (m - 1) * self.L * self.k

    def check_horizon(self, m: int) -> int:
        if self.T is None:
            raise ValueError("the reduction needs a horizon T")
        c = self.sampling_length(m)
        if self.T < c:
            raise ValueError(f"T={self.T} is shorter than the sampling stage ({c} rounds)")
        return c


def _slots_rng(env: Environment, rng):
    return rng if rng is not None else env.stream("slots")


def run_two_arm_sampler(prior: PriorModel, k: int, L: int, env: Environment, rng=None) -> Transcript:
    """Collect k samples of both arms: max(L, k) rounds of arm 0, then k
    phases of L rounds, each hiding one arm-1 round among exploit rounds."""
    if prior.m != 2:
        raise ValueError("the two-arm sampler needs exactly two arms")
    if k < 1 or L < 1:
        raise ValueError("k and L must be >= 1")
    rng = _slots_rng(env, rng)
    K = max(L, k)
    b = TranscriptBuilder()
    r0 = env.rewards(np.zeros(K, dtype=np.int64))
    b.extend([0] * K, r0, "initial")
    data = SampleSet(2)
    data.add(0, r0)
    a_star = argmax_lowest(prior.posterior_means(data))
    slots = []
    for n in range(1, k + 1):
        p = int(rng.integers(L))
        recs = np.full(L, a_star, dtype=np.int64)
        recs[p] = 1
        b.extend(recs, env.rewards(recs), f"block:{n}")
        slots.append(p)
    return b.build(env.instance, env.seed, env.replicate, algorithm="two-arm-sampler", k=k, L=L,
                   exploit_arm=a_star, slots=slots)


def run_m_arm_sampler(prior: PriorModel, k: int, L: int, env: Environment, rng=None):
    """Sampling stage for m arms.  Returns the transcript and the dataset
    holding exactly k samples of every arm (exploit-round rewards are not
    part of it)."""
    if prior.m < 2:
        raise ValueError("the sampling stage needs at least two arms")
    if k < 1 or L < 1:
        raise ValueError("k and L must be >= 1")
    rng = _slots_rng(env, rng)
    b = TranscriptBuilder()
    data = SampleSet(prior.m)
    r0 = env.rewards(np.zeros(k, dtype=np.int64))
    b.extend([0] * k, r0, "initial")
    data.add(0, r0)
    exploit = []
    for i in range(1, prior.m):
        a_star = argmax_lowest(prior.posterior_means(data))
        q = rng.choice(L * k, size=k, replace=False)
        recs = np.full(L * k, a_star, dtype=np.int64)
        recs[q] = i
        rewards = env.rewards(recs)
        b.extend(recs, rewards, f"sampling:{i}")
        data.add(i, rewards[q])
        exploit.append(a_star)
    tr = b.build(env.instance, env.seed, env.replicate, algorithm="m-arm-sampler", k=k, L=L,
                 sampling_exploit_arms=exploit)
    return tr, data


def prediction_for_round(t: int, c: int, L: int, phis) -> object:
    """Prediction recorded at global round t: phi_{floor((t-c)/L)} for
    t > c + L (1-based phi index), the null prediction otherwise."""
    if t <= c + L:
        return NULL_PREDICTION
    return phis[(t - c) // L - 1]


def run_simulation_stage(prior: PriorModel, data: SampleSet, L: int, n_rounds: int, c: int,
                         algorithm: BanditAlgorithm, env: Environment, rng=None) -> Transcript:
    """Phases of L rounds; one uniformly chosen agent per phase follows the
    wrapped algorithm, everyone else gets the posterior-best arm.  Only that
    agent's reward is returned to the algorithm.  A trailing partial phase is
    exploit-only."""
    rng = _slots_rng(env, rng)
    alg = algorithm if isinstance(algorithm, ProtocolChecked) else ProtocolChecked(algorithm)
    data = data.copy()
    b = TranscriptBuilder(with_prediction=True)
    phis: list = []
    dedicated: list[int] = []
    exploit: list[int] = []
    n_full, rest = divmod(n_rounds, L)
    for n in range(1, n_full + 1):
        a_star = argmax_lowest(prior.posterior_means(data))
        p = int(rng.integers(L))
        arm = alg.next_arm()
        phis.append(alg.predict())
        recs = np.full(L, a_star, dtype=np.int64)
        others = np.flatnonzero(np.arange(L) != p)
        rewards = np.empty(L)
        rewards[others] = env.rewards(recs[others])
        recs[p] = arm
        rewards[p] = env.reward(arm, stream="dedicated")
        alg.observe(arm, rewards[p])
        data.add_rounds(recs, rewards)
        start = c + (n - 1) * L
        preds = [prediction_for_round(start + s, c, L, phis) for s in range(1, L + 1)]
        b.extend(recs, rewards, f"simulation:{n}", predictions=preds)
        dedicated.append(start + p + 1)
        exploit.append(a_star)
    if rest:
        a_star = argmax_lowest(prior.posterior_means(data))
        recs = np.full(rest, a_star, dtype=np.int64)
        start = c + n_full * L
        preds = [prediction_for_round(start + s, c, L, phis) for s in range(1, rest + 1)]
        b.extend(recs, env.rewards(recs), "tail", predictions=preds)
        exploit.append(a_star)
    return b.build(env.instance, env.seed, env.replicate, dedicated=dedicated, exploit_arms=exploit,
                   phis=[None if ph is NULL_PREDICTION else ph for ph in phis])


def run_black_box_reduction(prior: PriorModel, cfg: ReductionConfig, algorithm: BanditAlgorithm,
                            env: Environment, rng=None) -> Transcript:
    """Sampling stage followed by the simulation stage, with shared (k, L)."""
    c = cfg.check_horizon(prior.m)
    rng = _slots_rng(env, rng)
    sampling, data = run_m_arm_sampler(prior, cfg.k, cfg.L, env, rng)
    sim = run_simulation_stage(prior, data, cfg.L, cfg.T - c, c, algorithm, env, rng)
    out = concat_transcripts([sampling, sim], algorithm="bic-reduction", k=cfg.k, L=cfg.L, T=cfg.T, c=c)
    return out
