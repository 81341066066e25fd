from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bic_explore.baselines import Environment
from bic_explore.detail_free import (ArmSamples, DetailFreeConfig, RaceState, df_exploit_arm,
                                     df_two_arm_exploit_arm, run_detail_free, run_df_race_m,
                                     run_df_sampling_m, run_df_two_arm_race, run_df_two_arm_sampling)
from bic_explore.harness import BicAuditor
from bic_explore.metrics import expost_regret
from bic_explore.model import BERNOULLI, POINTMASS, MabInstance, RewardFamily
from bic_explore.priors import BoundedGrid, IndependentPrior, df_two_arm_thresholds


def fixed_env(means, seed=0, replicate=0, family=BERNOULLI):
    return Environment(MabInstance(means), [family] * len(means), seed, replicate)


def warm_samples(env, k):
    m = env.m
    r = env.rewards(np.repeat(np.arange(m), k), stream="warm").reshape(m, k)
    return ArmSamples(np.full(m, k, dtype=np.int64), r.sum(axis=1))


class TestExploitRules:
    def test_m_arm_rule_picks_i(self):
        assert df_exploit_arm(2, [0.3, 0.45], [0.9, 0.7, 0.6], 0.1) == 2

    def test_m_arm_rule_first_conjunct_fails(self):
        assert df_exploit_arm(2, [0.55, 0.45], [0.9, 0.7, 0.6], 0.1) == 0

    def test_m_arm_rule_middle_arm_fails(self):
        assert df_exploit_arm(2, [0.3, 0.55], [0.9, 0.7, 0.6], 0.1) == 0

    def test_two_arm_rule(self):
        assert df_two_arm_exploit_arm(0.2, 0.5, 0.25) == 1
        assert df_two_arm_exploit_arm(0.3, 0.5, 0.25) == 0

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=5), st.floats(0.01, 0.3), st.data())
    @settings(max_examples=60)
    def test_only_arm_zero_or_i(self, avgs, C, data):
        m = len(avgs)
        i = data.draw(st.integers(1, m - 1))
        means = sorted(data.draw(st.lists(st.floats(0.1, 1), min_size=m, max_size=m)), reverse=True)
        assert df_exploit_arm(i, avgs, means, C) in (0, i)


class TestSampling:
    def test_round_count(self):
        tr, s = run_df_sampling_m([0.6, 0.5, 0.4], 2, 3, 0.05, fixed_env([0.6, 0.5, 0.4]))
        assert len(tr) == 14
        np.testing.assert_array_equal(s.counts, [2, 2, 2])

    @given(st.integers(1, 5), st.integers(1, 6), st.integers(2, 4), st.integers(0, 50))
    @settings(max_examples=40, deadline=None)
    def test_round_count_property(self, k, L, m, rep):
        means = list(np.linspace(0.7, 0.3, m))
        tr, s = run_df_sampling_m(means, k, L, 0.05, fixed_env(means, 1, rep))
        assert len(tr) == k + L * k * (m - 1)
        assert np.all(s.counts == k)

    def test_rejects_unbounded(self):
        env = Environment(MabInstance([0.5, 0.4]), [RewardFamily("gaussian")] * 2, 0, 0)
        with pytest.raises(ValueError):
            run_df_sampling_m([0.5, 0.4], 1, 1, 0.05, env)

    def test_two_arm_round_count(self):
        tr, s = run_df_two_arm_sampling([0.5, 0.5], 3, 10, 4, 0.25, fixed_env([0.5, 0.5]))
        assert len(tr) == 4 * 3 + 10
        np.testing.assert_array_equal(s.counts, [3, 3])

    def test_two_arm_sampling_audit(self):
        th = df_two_arm_thresholds(0.5, 0.5, 0.5, 0.125)
        prior = IndependentPrior([BoundedGrid.uniform(1000), BoundedGrid.uniform(1000)])
        auditor = BicAuditor()
        for r in range(20_000):
            env = Environment.from_prior(prior, 6, r)
            tr, _ = run_df_two_arm_sampling(prior.means, 2, th.k_star, th.L, th.C, env)
            auditor.add(tr)
        assert auditor.report(0.01, 200).verdict == "PASS"


class TestRace:
    def test_threshold(self):
        st_ = RaceState([0, 1], np.array([100, 100]), np.array([70.0, 20.0]), math.log(1e6), 100)
        assert st_.threshold() == pytest.approx(0.3717, abs=1e-4)
        st_.recompute()
        assert st_.active == [0] and st_.eliminated == {1: 100}

    def test_pointmass_immediate(self):
        env = fixed_env([0.9, 0.1], family=POINTMASS)
        samples = ArmSamples(np.array([25, 25]), np.array([22.5, 2.5]))
        tr = run_df_two_arm_race(samples, 25, 100.0, 10_000, 500, env)
        assert tr.meta["eliminated"] == {"1": 25}
        assert set(tr.recommendation) == {0}

    def test_pointmass_first_crossing(self):
        env = fixed_env([0.9, 0.1], family=POINTMASS)
        samples = ArmSamples(np.array([1, 1]), np.array([0.9, 0.1]))
        tr = run_df_two_arm_race(samples, 1, 100.0, 10_000, 500, env)
        n_star = next(n for n in range(1, 1000) if 0.8 > math.sqrt(math.log(1e6) / n))
        assert tr.meta["eliminated"] == {"1": n_star}
        assert np.sum(tr.recommendation == 1) == n_star - 1

    def test_zero_gap(self):
        env = fixed_env([0.5, 0.5], family=POINTMASS)
        tr = run_df_two_arm_race(ArmSamples(np.array([3, 3]), np.array([1.5, 1.5])), 3, 10.0, 1000, 1000, env)
        assert expost_regret(tr) == 0.0 and tr.meta["race_rounds"] == 1000

    def test_requires_equal_counts(self):
        with pytest.raises(ValueError):
            run_df_race_m(ArmSamples(np.array([2, 3]), np.array([1.0, 1.0])), 2, 10.0, 100, 10, fixed_env([0.5, 0.4]))

    @pytest.mark.parametrize("replicate", range(20))
    def test_monotone_elimination(self, replicate):
        env = fixed_env([0.6, 0.55, 0.3, 0.5], 3, replicate)
        tr = run_df_race_m(warm_samples(env, 5), 5, 10.0, 5000, 5000, env)
        for arm_s, n in tr.meta["eliminated"].items():
            arm = int(arm_s)
            last = max(i for i, p in enumerate(tr.phase) if tr.recommendation[i] == arm) if arm in tr.recommendation else -1
            if last >= 0:
                assert tr.phase[last].startswith("race:") and int(tr.phase[last][5:]) < n

    def test_survivor_is_best(self):
        mu = (0.7, 0.5, 0.3)
        wins = 0
        for r in range(1000):
            env = fixed_env(mu, 8, r)
            tr = run_df_race_m(warm_samples(env, 200), 200, 100.0, 10_000, 10_000 - 600, env)
            wins += tr.meta["survivor"] == 0
        assert wins >= 990

    def test_best_arm_elimination_rate(self):
        mu, theta = (0.6, 0.55, 0.5), 10.0
        bad = 0
        reps = 400
        for r in range(reps):
            env = fixed_env(mu, 9, r)
            tr = run_df_race_m(warm_samples(env, 2), 2, theta, 5000, 5000, env)
            bad += "0" in tr.meta["eliminated"]
        assert bad / reps <= len(mu) ** 2 / theta


class TestFullAlgorithm:
    def test_sampling_length(self):
        cfg = DetailFreeConfig(0.4, 3, 500, (0.6, 0.5, 0.4))
        assert cfg.sampling_length == 21
        tr = run_detail_free(cfg, fixed_env([0.6, 0.5, 0.4]))
        assert tr.meta["c"] == 21 and len(tr) == 500
        assert cfg.constants()["C"] == pytest.approx(0.4 / 6)

    def test_validation(self):
        with pytest.raises(ValueError):
            DetailFreeConfig(0.0, 3, 500, (0.6, 0.5))
        with pytest.raises(ValueError):
            DetailFreeConfig(0.4, 10, 50, (0.6, 0.5, 0.4))

    def test_regret_corollary(self):
        mu = (0.7, 0.5, 0.3)
        cfg = DetailFreeConfig(0.5, 10, 10_000, (0.6, 0.5, 0.4))
        regs = [expost_regret(run_detail_free(cfg, fixed_env(mu, 10, r))) for r in range(200)]
        bound = min(2 * cfg.sampling_length, math.sqrt(18 * cfg.T * math.log(cfg.T * cfg.race_theta)))
        assert np.mean(regs) <= bound

    def test_never_queries_posterior(self, monkeypatch):
        import bic_explore.priors as priors

        def boom(*a, **k):
            raise AssertionError("posterior queried")

        monkeypatch.setattr(priors.PriorModel, "posterior_means", boom)
        monkeypatch.setattr(priors.IndependentPrior, "posterior_means_batch", boom)
        cfg = DetailFreeConfig(0.4, 4, 400, (0.6, 0.5, 0.4))
        run_detail_free(cfg, fixed_env([0.6, 0.5, 0.4]))
