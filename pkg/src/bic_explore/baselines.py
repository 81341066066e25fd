"""Simulation environment and the reference bandit algorithms that the
reductions wrap.

Every algorithm follows the same protocol: ``next_arm`` then ``observe``,
strictly alternating; ``predict`` is read-only and may be called at any time.
Contextual algorithms receive the context through the ``context`` keyword;
context-free algorithms ignore it.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Callable, Sequence

import numpy as np

from .model import (NULL_PREDICTION, MabInstance, ProtocolError, RewardFamily, TranscriptBuilder,
                    derive_stream)
from .priors import PriorModel, SampleSet


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

def second_draw_feedback(family: RewardFamily) -> Callable:
    """Feedback family that reveals one more independent reward draw."""

    def fb(mu, rng):
        return family.from_uniform(mu, rng.random(np.shape(mu))).tolist()

    return fb


class Environment:
    """Nature for one replicate: the realised instance plus keyed streams.

    Every reward consumes one uniform from the requested stream, so drawing a
    batch of rewards and drawing them one at a time give the same values.
    """

    def __init__(self, instance: MabInstance, families: Sequence[RewardFamily], seed: int = 0,
                 replicate: int = 0, context_probs=None, feedback: Callable | None = None):
        self.instance = instance
        self.families = tuple(families)
        if len(self.families) != instance.m:
            raise ValueError("one reward family per arm is required")
        self.seed = seed
        self.replicate = replicate
        self.context_probs = None if context_probs is None else np.asarray(context_probs, dtype=float)
        if self.context_probs is not None and instance.means.ndim != 2:
            raise ValueError("contextual environments need a mean matrix")
        self.feedback_fn = feedback
        self._streams: dict[str, np.random.Generator] = {}
        self._same_family = all(f == self.families[0] for f in self.families)

    @classmethod
    def from_prior(cls, prior: PriorModel, seed: int, replicate: int = 0, **kwargs) -> "Environment":
        mu = prior.sample_means(derive_stream(seed, replicate, "instance"), 1)[0]
        return cls(MabInstance(mu), prior.families, seed, replicate, **kwargs)

    @property
    def m(self) -> int:
        return self.instance.m

    def stream(self, tag: str) -> np.random.Generator:
        if tag not in self._streams:
            self._streams[tag] = derive_stream(self.seed, self.replicate, tag)
        return self._streams[tag]

    def _means(self, arms, contexts):
        mu = self.instance.means
        if contexts is None:
            if mu.ndim != 1:
                raise ValueError("contextual instance needs contexts")
            return mu[arms]
        return mu[arms, contexts]

    def rewards(self, arms, contexts=None, stream: str = "rewards") -> np.ndarray:
        arms = np.asarray(arms, dtype=np.int64)
        if arms.size == 0:
            return np.zeros(0)
        return self.rewards_from_uniforms(arms, self.stream(stream).random(arms.size), contexts)

    def rewards_from_uniforms(self, arms, u, contexts=None) -> np.ndarray:
        arms = np.asarray(arms, dtype=np.int64)
        mu = self._means(arms, None if contexts is None else np.asarray(contexts, dtype=np.int64))
        if self._same_family:
            return np.asarray(self.families[0].from_uniform(mu, u), dtype=float)
        out = np.empty(arms.size)
        for a in np.unique(arms):
            sel = arms == a
            out[sel] = self.families[a].from_uniform(mu[sel], u[sel])
        return out

    def reward(self, arm: int, context=None, stream: str = "rewards") -> float:
        return float(self.rewards([arm], None if context is None else [context], stream)[0])

    def feedback(self, arms, contexts=None, stream: str = "feedback"):
        if self.feedback_fn is None:
            return None
        arms = np.asarray(arms, dtype=np.int64)
        mu = self._means(arms, None if contexts is None else np.asarray(contexts, dtype=np.int64))
        return list(self.feedback_fn(mu, self.stream(stream)))

    def contexts(self, n: int, stream: str = "contexts") -> np.ndarray:
        if self.context_probs is None:
            raise ValueError("environment has no context distribution")
        return self.stream(stream).choice(self.context_probs.size, size=n, p=self.context_probs)


# ---------------------------------------------------------------------------
# Algorithm protocol
# ---------------------------------------------------------------------------

def _argmax(values) -> int:
    return int(np.argmax(np.asarray(values)))


class BanditAlgorithm(ABC):
    """Stateful bandit learner."""

    m: int

    @abstractmethod
    def next_arm(self, context=None) -> int:
        ...

    @abstractmethod
    def observe(self, arm: int, reward: float, feedback=None, context=None) -> None:
        ...

    def predict(self):
        return NULL_PREDICTION


class ProtocolChecked(BanditAlgorithm):
    """Wrapper that enforces strict next_arm/observe alternation."""

    def __init__(self, inner: BanditAlgorithm):
        self.inner = inner
        self.m = inner.m
        self._pending: int | None = None
        self.calls = 0

    def next_arm(self, context=None) -> int:
        if self._pending is not None:
            raise ProtocolError("next_arm called twice without observe")
        arm = int(self.inner.next_arm(context=context))
        if not 0 <= arm < self.m:
            raise ProtocolError(f"algorithm chose arm {arm} outside [0, {self.m})")
        self._pending = arm
        return arm

    def observe(self, arm, reward, feedback=None, context=None) -> None:
        if self._pending is None:
            raise ProtocolError("observe called before next_arm")
        if arm != self._pending:
            raise ProtocolError(f"observed arm {arm} but the algorithm chose {self._pending}")
        self._pending = None
        self.calls += 1
        self.inner.observe(arm, reward, feedback=feedback, context=context)

    def predict(self):
        return self.inner.predict()


class _Counting(BanditAlgorithm):
    def __init__(self, m: int):
        if m < 1:
            raise ValueError("need at least one arm")
        self.m = m
        self.counts = np.zeros(m, dtype=np.int64)
        self.sums = np.zeros(m)

    def observe(self, arm, reward, feedback=None, context=None):
        self.counts[arm] += 1
        self.sums[arm] += reward

    def averages(self):
        return np.divide(self.sums, self.counts, out=np.zeros(self.m), where=self.counts > 0)

    def predict(self):
        return _argmax(self.averages())


class UCB1(_Counting):
    """Index rule mean + sqrt(2 ln t / n_i); ties to the lowest index."""

    def next_arm(self, context=None):
        unseen = np.flatnonzero(self.counts == 0)
        if unseen.size:
            return int(unseen[0])
        t = self.counts.sum()
        return _argmax(self.sums / self.counts + np.sqrt(2.0 * math.log(t) / self.counts))


class ActiveArmsElimination(_Counting):
    """Plain active arms elimination with threshold sqrt(ln(T theta) / n).

    Phases play each active arm once in index order.  Before every phase with
    n >= 1 samples per active arm, arms whose average trails the leader by
    more than the threshold are dropped.  ``warm_counts``/``warm_sums`` start
    the race from an existing equal-size sample of every arm.
    """

    def __init__(self, m: int, T: int, theta: float = 1.0, warm_counts=None, warm_sums=None):
        super().__init__(m)
        if T < 1 or theta <= 0:
            raise ValueError("need T >= 1 and theta > 0")
        self.log_term = math.log(T * theta)
        self.active = list(range(m))
        self._queue: list[int] = []
        if warm_counts is not None:
            self.counts = np.asarray(warm_counts, dtype=np.int64).copy()
            self.sums = np.asarray(warm_sums, dtype=float).copy()

    def threshold(self, n: int) -> float:
        return math.sqrt(self.log_term / n) if n > 0 else math.inf

    def _refresh(self):
        n = int(self.counts[self.active[0]])
        if len(self.active) > 1 and n > 0:
            avg = self.sums[self.active] / n
            keep = avg.max() - avg <= self.threshold(n)
            self.active = [a for a, k in zip(self.active, keep) if k]
        self._queue = list(self.active)

    def next_arm(self, context=None):
        if not self._queue:
            self._refresh()
        if len(self.active) == 1:
            return self.active[0]
        return self._queue[0]

    def observe(self, arm, reward, feedback=None, context=None):
        super().observe(arm, reward)
        if self._queue and self._queue[0] == arm:
            self._queue.pop(0)


class ExploreThenCommit(_Counting):
    """Round-robin ``k_explore`` samples per arm, then commit to the best average."""

    def __init__(self, m: int, k_explore: int):
        super().__init__(m)
        if k_explore < 1:
            raise ValueError("k_explore must be >= 1")
        self.k_explore = k_explore

    def next_arm(self, context=None):
        t = int(self.counts.sum())
        if t < self.m * self.k_explore:
            return t % self.m
        return _argmax(self.averages())


class Greedy(BanditAlgorithm):
    """Bayesian greedy: always the arm with the highest posterior mean given
    its own observations."""

    def __init__(self, prior: PriorModel):
        self.prior = prior
        self.m = prior.m
        self.data = SampleSet(prior.m)
        self._cache = None

    def _pm(self):
        if self._cache is None:
            self._cache = self.prior.posterior_means(self.data)
        return self._cache

    def next_arm(self, context=None):
        return _argmax(self._pm())

    def observe(self, arm, reward, feedback=None, context=None):
        self.data.add(arm, reward)
        self._cache = None

    def predict(self):
        return _argmax(self._pm())


class Constant(BanditAlgorithm):
    def __init__(self, m: int, arm: int = 0):
        if not 0 <= arm < m:
            raise ValueError("constant arm out of range")
        self.m = m
        self.arm = arm

    def next_arm(self, context=None):
        return self.arm

    def observe(self, arm, reward, feedback=None, context=None):
        pass

    def predict(self):
        return self.arm


class UniformRandom(_Counting):
    def __init__(self, m: int, rng: np.random.Generator):
        super().__init__(m)
        self.rng = rng

    def next_arm(self, context=None):
        return int(self.rng.integers(self.m))


class EpsilonGreedyPolicies(BanditAlgorithm):
    """Epsilon-greedy over a finite policy class with inverse-propensity
    value estimates.  ``policies`` has shape (n_policies, n_contexts) and maps
    contexts to arms.  Feedback is ignored.  ``predict`` returns the index of
    the empirically best policy."""

    def __init__(self, policies, m: int, epsilon: float, rng: np.random.Generator):
        if not 0 <= epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        self.policies = np.atleast_2d(np.asarray(policies, dtype=np.int64))
        if np.any(self.policies < 0) or np.any(self.policies >= m):
            raise ValueError("policy maps a context to an unknown arm")
        self.m = m
        self.epsilon = epsilon
        self.rng = rng
        self.value = np.zeros(len(self.policies))
        self.n = 0

    def best_policy(self) -> int:
        return _argmax(self.value)

    def next_arm(self, context=None):
        x = 0 if context is None else int(context)
        if self.epsilon > 0 and self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.m))
        return int(self.policies[self.best_policy(), x])

    def observe(self, arm, reward, feedback=None, context=None):
        x = 0 if context is None else int(context)
        greedy_arm = self.policies[self.best_policy(), x]
        prop = self.epsilon / self.m + (1 - self.epsilon) * (arm == greedy_arm)
        match = self.policies[:, x] == arm
        self.value += match * reward / prop
        self.n += 1

    def predict(self):
        return self.best_policy()


# ---------------------------------------------------------------------------
# Registry and standalone runs
# ---------------------------------------------------------------------------

def make_algorithm(name: str, m: int, T: int = 1000, prior: PriorModel | None = None,
                   rng: np.random.Generator | None = None, **params) -> BanditAlgorithm:
    """Build a registered algorithm by name."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if name == "ucb1":
        return UCB1(m)
    if name == "aae":
        return ActiveArmsElimination(m, T, float(params.get("theta", 1.0)))
    if name == "etc":
        return ExploreThenCommit(m, int(params.get("k_explore", 10)))
    if name == "greedy":
        if prior is None:
            raise ValueError("greedy needs a prior")
        return Greedy(prior)
    if name == "constant":
        return Constant(m, int(params.get("arm", 0)))
    if name == "uniform":
        return UniformRandom(m, rng)
    if name == "eps-greedy":
        return EpsilonGreedyPolicies(params["policies"], m, float(params.get("epsilon", 0.1)), rng)
    raise KeyError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}")


ALGORITHMS = ("aae", "constant", "eps-greedy", "etc", "greedy", "ucb1", "uniform")


def run_standalone(algorithm: BanditAlgorithm, env: Environment, T: int, stream: str = "dedicated",
                   context_stream: str = "dedicated-contexts", feedback_stream: str = "dedicated-feedback",
                   **meta):
    """Run ``algorithm`` alone for T rounds.

    The default stream tags are the ones the reductions use for their
    dedicated agents, so a standalone run and a reduction run that share
    (seed, replicate) feed the algorithm identical observations.
    """
    alg = ProtocolChecked(algorithm)
    contextual = env.context_probs is not None
    b = TranscriptBuilder(with_context=contextual, with_feedback=env.feedback_fn is not None,
                          with_prediction=True)
    for _ in range(T):
        x = int(env.contexts(1, context_stream)[0]) if contextual else None
        arm = alg.next_arm(context=x)
        phi = alg.predict()
        r = env.reward(arm, x, stream)
        fb = env.feedback([arm], None if x is None else [x], feedback_stream)
        f = None if fb is None else fb[0]
        alg.observe(arm, r, feedback=f, context=x)
        b.extend([arm], [r], "standalone", contexts=None if x is None else [x],
                 feedback=None if fb is None else [f], predictions=[phi])
    return b.build(env.instance, env.seed, env.replicate, **meta)
