"""Detail-free BIC exploration: sampling stages that compare sample averages
against published prior means with a safety margin, and racing stages built
on active arms elimination.

Nothing here queries a posterior.  The only prior knowledge used is the
vector of prior means and the margin C.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import Environment
from .model import Transcript, TranscriptBuilder, concat_transcripts


def _check_bounded(env: Environment) -> None:
    if not all(f.bounded for f in env.families):
        raise ValueError("detail-free algorithms need rewards in [0, 1]")


def _validate(k: int, L: int, C: float) -> None:
    if k < 1 or L < 1:
        raise ValueError("k and L must be >= 1")
    if not 0 < C < 1:
        raise ValueError("C must lie in (0, 1)")


@dataclass
class ArmSamples:
    """Equal-size samples of every arm handed from a sampling stage to a race."""

    counts: np.ndarray
    sums: np.ndarray

    @classmethod
    def empty(cls, m: int) -> "ArmSamples":
        return cls(np.zeros(m, dtype=np.int64), np.zeros(m))

    def add(self, arm: int, rewards) -> None:
        r = np.asarray(rewards, dtype=float)
        if np.any((r < 0) | (r > 1)):
            raise ValueError("reward outside [0, 1]")
        self.counts[arm] += r.size
        self.sums[arm] += r.sum()

    def averages(self) -> np.ndarray:
        return np.divide(self.sums, self.counts, out=np.full(self.sums.shape, np.nan), where=self.counts > 0)


def df_exploit_arm(i: int, averages, prior_means, C: float) -> int:
    """Exploit arm of the sampling phase for arm ``i`` (0-based, i >= 1).

    Arm i wins iff avg_0 < mu_i^0 - C and avg_0 + C < avg_j < mu_i^0 - C for
    every arm strictly between 0 and i; otherwise arm 0.
    """
    avg = np.asarray(averages, dtype=float)
    cap = prior_means[i] - C
    if not avg[0] < cap:
        return 0
    mid = avg[1:i]
    if np.all((avg[0] + C < mid) & (mid < cap)):
        return i
    return 0


def df_two_arm_exploit_arm(avg0: float, mu1_prior: float, C: float) -> int:
    """Arm 1 iff avg_0 <= mu_1^0 - C."""
    return 1 if avg0 <= mu1_prior - C else 0


def run_df_sampling_m(prior_means, k: int, L: int, C: float, env: Environment, rng=None):
    """Detail-free sampling stage for m arms; k + Lk(m-1) rounds.

    Returns (transcript, samples) with exactly k samples of every arm.
    """
    _check_bounded(env)
    _validate(k, L, C)
    prior_means = np.asarray(prior_means, dtype=float)
    m = prior_means.size
    if m < 2 or m != env.m:
        raise ValueError("prior means must match the environment's arms (m >= 2)")
    rng = rng if rng is not None else env.stream("slots")
    b = TranscriptBuilder()
    samples = ArmSamples.empty(m)
    r0 = env.rewards(np.zeros(k, dtype=np.int64))
    samples.add(0, r0)
    b.extend([0] * k, r0, "initial")
    exploit = []
    for i in range(1, m):
        a_star = df_exploit_arm(i, samples.averages(), prior_means, C)
        q = rng.choice(L * k, size=k, replace=False)
        recs = np.full(L * k, a_star, dtype=np.int64)
        recs[q] = i
        rewards = env.rewards(recs)
        samples.add(i, rewards[q])
        b.extend(recs, rewards, f"sampling:{i}")
        exploit.append(a_star)
    tr = b.build(env.instance, env.seed, env.replicate, algorithm="df-sampling", k=k, L=L, C=C,
                 sampling_exploit_arms=exploit)
    return tr, samples


def run_df_two_arm_sampling(prior_means, k: int, k_star: int, L: int, C: float, env: Environment, rng=None):
    """Two-arm detail-free sampling: max(k, k*) rounds of arm 0, then a block
    of Lk rounds with k uniformly placed arm-1 rounds; Lk + max(k, k*) rounds.

    The race receives the first k samples of arm 0 and the k arm-1 samples.
    """
    _check_bounded(env)
    _validate(k, L, C)
    if k_star < 1:
        raise ValueError("k_star must be >= 1")
    prior_means = np.asarray(prior_means, dtype=float)
    if prior_means.size != 2 or env.m != 2:
        raise ValueError("two-arm sampling needs exactly two arms")
    rng = rng if rng is not None else env.stream("slots")
    K = max(k, k_star)
    b = TranscriptBuilder()
    r0 = env.rewards(np.zeros(K, dtype=np.int64))
    b.extend([0] * K, r0, "initial")
    a_star = df_two_arm_exploit_arm(float(r0.mean()), prior_means[1], C)
    q = rng.choice(L * k, size=k, replace=False)
    recs = np.full(L * k, a_star, dtype=np.int64)
    recs[q] = 1
    rewards = env.rewards(recs)
    b.extend(recs, rewards, "sampling:1")
    samples = ArmSamples.empty(2)
    samples.add(0, r0[:k])
    samples.add(1, rewards[q])
    tr = b.build(env.instance, env.seed, env.replicate, algorithm="df-two-arm-sampling", k=k,
                 k_star=k_star, L=L, C=C, sampling_exploit_arms=[a_star])
    return tr, samples


# ---------------------------------------------------------------------------
# Racing
# ---------------------------------------------------------------------------

@dataclass
class RaceState:
    active: list
    counts: np.ndarray
    sums: np.ndarray
    log_term: float
    n: int
    eliminated: dict = field(default_factory=dict)

    def threshold(self, n: int | None = None) -> float:
        n = self.n if n is None else n
        return math.sqrt(self.log_term / n)

    def recompute(self) -> None:
        """Drop arms trailing the leader by more than c_n."""
        if len(self.active) < 2:
            return
        avg = self.sums[self.active] / self.n
        keep = avg.max() - avg <= self.threshold()
        for a, kp in zip(self.active, keep):
            if not kp:
                self.eliminated[a] = self.n
        self.active = [a for a, kp in zip(self.active, keep) if kp]

    def leader(self) -> int:
        avg = self.sums[self.active] / np.maximum(self.counts[self.active], 1)
        return self.active[int(np.argmax(avg))]


def _race(samples: ArmSamples, T_rounds: int, theta: float, T: int, env: Environment, block0: int = 32):
    counts = samples.counts.astype(np.int64).copy()
    if counts.min() < 1 or np.any(counts != counts[0]):
        raise ValueError("the race needs k >= 1 samples of every arm, equal across arms")
    if theta < 1:
        raise ValueError("theta must be >= 1")
    state = RaceState(list(range(counts.size)), counts, samples.sums.astype(float).copy(),
                      math.log(T * theta), int(counts[0]))
    b = TranscriptBuilder()
    remaining = T_rounds
    stream = env.stream("rewards")
    block = block0
    state.recompute()
    while remaining > 0 and len(state.active) > 1:
        act = np.asarray(state.active, dtype=np.int64)
        width = act.size
        n_ph = min(block, -(-remaining // width))
        saved = stream.bit_generator.state
        u = stream.random(n_ph * width)
        recs = np.tile(act, n_ph)
        rewards = env.rewards_from_uniforms(recs, u).reshape(n_ph, width)
        cum = state.sums[act] + np.cumsum(rewards, axis=0)
        ns = state.n + np.arange(1, n_ph + 1)
        avg = cum / ns[:, None]
        thr = np.sqrt(state.log_term / ns)
        drop = (avg.max(axis=1) - avg.min(axis=1)) > thr
        full_rounds = n_ph * width
        if drop.any():
            used_ph = int(np.argmax(drop)) + 1
        else:
            used_ph = n_ph
        used = min(used_ph * width, remaining)
        if used < full_rounds:
            stream.bit_generator.state = saved
            stream.random(used)
        flat_recs = recs[:used]
        flat_rew = rewards.reshape(-1)[:used]
        phase_idx = state.n + np.arange(used) // width
        b.recs.extend(flat_recs.tolist())
        b.rewards.extend(flat_rew.tolist())
        b.phases.extend(f"race:{p}" for p in phase_idx.tolist())
        remaining -= used
        if used == used_ph * width:
            state.counts[act] += used_ph
            state.sums[act] = cum[used_ph - 1]
            state.n += used_ph
            state.recompute()
            block = block0 if drop.any() else min(block * 2, 4096)
        else:
            done = used // width
            state.counts[act] += done
            np.add.at(state.counts, flat_recs[done * width:], 1)
            state.sums[act] += flat_rew[: done * width].reshape(done, width).sum(axis=0) if done else 0.0
            np.add.at(state.sums, flat_recs[done * width:], flat_rew[done * width:])
    survivor = state.active[0] if len(state.active) == 1 else state.leader()
    commit_start = T_rounds - remaining
    if remaining > 0:
        recs = np.full(remaining, survivor, dtype=np.int64)
        b.extend(recs, env.rewards(recs), "commit")
    meta = {"survivor": survivor, "eliminated": {str(a): n for a, n in state.eliminated.items()},
            "race_rounds": commit_start, "theta": theta}
    return b, meta


def run_df_race_m(samples: ArmSamples, k: int, theta: float, T: int, n_rounds: int, env: Environment) -> Transcript:
    """Race for m arms over ``n_rounds`` rounds, starting from phase n = k.

    Each phase recomputes the active set B and recommends every active arm
    once in index order; once |B| = 1 the survivor is recommended for every
    remaining round.  Eliminated arms are never sampled again.
    """
    _check_bounded(env)
    if int(samples.counts.min()) != k or int(samples.counts.max()) != k:
        raise ValueError("the race needs exactly k samples of every arm")
    b, meta = _race(samples, n_rounds, theta, T, env)
    return b.build(env.instance, env.seed, env.replicate, algorithm="df-race", k=k, **meta)


def run_df_two_arm_race(samples: ArmSamples, k: int, theta: float, T: int, n_rounds: int,
                        env: Environment) -> Transcript:
    """Two-arm race: alternate both arms while |avg_0 - avg_1| <= c_n, then
    commit to the leader."""
    if env.m != 2 or samples.counts.size != 2:
        raise ValueError("the two-arm race needs exactly two arms")
    return run_df_race_m(samples, k, theta, T, n_rounds, env)


# ---------------------------------------------------------------------------
# Full algorithm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetailFreeConfig:
    """Single-parameter wiring: C = mu_hat / 6 and k = L = theta = N."""

    mu_hat: float
    N: int
    T: int
    prior_means: tuple
    tau: float = 0.2
    theta: float | None = None

    def __post_init__(self):
        if not self.mu_hat > 0:
            raise ValueError("mu_hat must be positive")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        means = tuple(float(x) for x in self.prior_means)
        object.__setattr__(self, "prior_means", means)
        if len(means) < 2:
            raise ValueError("need at least two arms")
        if self.T < self.sampling_length:
            raise ValueError(f"T={self.T} is shorter than the sampling stage ({self.sampling_length} rounds)")

    @property
    def m(self) -> int:
        return len(self.prior_means)

    @property
    def C(self) -> float:
        return self.mu_hat / 6

    @property
    def race_theta(self) -> float:
        return float(self.N if self.theta is None else self.theta)

    @property
    def sampling_length(self) -> int:
        return self.N + self.N**2 * (self.m - 1)

    def constants(self) -> dict:
        return {"C": self.C, "k": self.N, "L": self.N, "theta": self.race_theta,
                "f_N": self.sampling_length, "mu_hat": self.mu_hat, "N": self.N, "T": self.T}


def run_detail_free(cfg: DetailFreeConfig, env: Environment, rng=None) -> Transcript:
    """Detail-free sampling followed by the race, over T rounds in total."""
    sampling, samples = run_df_sampling_m(cfg.prior_means, cfg.N, cfg.N, cfg.C, env, rng)
    race = run_df_race_m(samples, cfg.N, cfg.race_theta, cfg.T, cfg.T - len(sampling), env)
    return concat_transcripts([sampling, race], algorithm="detail-free", c=len(sampling), **cfg.constants())
