from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bic_explore.model import BERNOULLI, RewardFamily, derive_stream
from bic_explore.priors import (ArmOrderError, BetaBernoulli, BoundedGrid, DegenerateDataError, GaussianConjugate,
                                IndependentPrior, JointPrior, PersuasionConstants, PointMassPrior,
                                PriorNotPersuadable, SampleSet, chernoff_required_k, detail_free_thresholds,
                                df_m_arm_thresholds, df_two_arm_thresholds, estimate_persuasion_constants,
                                expected_max_mean, hoeffding_tail, min_phase_length_m_arm,
                                min_phase_length_two_arm, offset_prior, persuasion_gain, posterior_mean,
                                prob_race_margin, prob_two_arm_cdf, racing_thresholds, xk_distribution)

GAUSS = IndependentPrior([GaussianConjugate(1.0, 1.0, 1.0), GaussianConjugate(0.5, 1.0, 1.0)])


def _data(m, rewards):
    return SampleSet.from_rewards(m, rewards)


class TestPosteriorMean:
    def test_gaussian_one_sample(self):
        assert posterior_mean(GAUSS, _data(2, {0: [2.0]}), 0) == pytest.approx(1.5)

    @pytest.mark.parametrize("arm", [GaussianConjugate(0.3, 2.0), BetaBernoulli(2, 5), BoundedGrid.uniform(200),
                                     PointMassPrior(0.4)])
    def test_empty_dataset_gives_prior_mean(self, arm):
        assert arm.posterior_mean(0, 0.0) == pytest.approx(arm.mean)

    def test_uniform_grid_matches_beta(self):
        g = BoundedGrid.uniform(10_000)
        assert abs(g.posterior_mean(4, 3.0) - 4 / 6) < 1e-3

    def test_beta_closed_form(self):
        assert BetaBernoulli(2.0, 3.0).posterior_mean(10, 4.0) == pytest.approx(6 / 15)

    def test_bernoulli_rejects_non_binary(self):
        prior = IndependentPrior([BetaBernoulli(1, 1), BetaBernoulli(1, 1)])
        with pytest.raises(ValueError):
            prior.posterior_means(_data(2, {0: [0.5]}))

    def test_degenerate_grid(self):
        g = BoundedGrid([1.0], [1.0])
        with pytest.raises(DegenerateDataError):
            g.posterior_mean(3, 1.0)

    def test_grid_scalar_path_matches_vector(self):
        g = BoundedGrid.truncated_normal(0.7, 0.3)
        for n, s in [(0, 0), (3, 1), (50, 50), (200, 17)]:
            assert g.posterior_mean_scalar(n, s) == pytest.approx(float(g.posterior_mean(n, float(s))), abs=1e-12)

    @given(st.floats(0.5, 5), st.floats(0.5, 5), st.integers(0, 40), st.data())
    @settings(max_examples=50, deadline=None)
    def test_conjugate_vs_grid(self, a, b, n, data):
        s = data.draw(st.integers(0, n))
        grid = BoundedGrid.from_density(lambda x: stats.beta.pdf(x, a, b), 4000)
        assert grid.posterior_mean(n, float(s)) == pytest.approx(BetaBernoulli(a, b).posterior_mean(n, s), abs=2e-3)

    def test_importance_sampling_vs_conjugate(self):
        arms = [BetaBernoulli(3, 2), BetaBernoulli(2, 2)]
        ind = IndependentPrior(arms)

        def sampler(rng, size):
            return np.column_stack([a.sample(rng, size) for a in arms])

        joint = JointPrior(sampler, [BERNOULLI, BERNOULLI], n_draws=200_000, seed=3)
        rng = np.random.default_rng(1)
        for _ in range(50):
            counts = rng.integers(0, 8, size=(1, 2))
            sums = rng.binomial(counts, 0.5).astype(float)
            exact = ind.posterior_means_batch(counts, sums)[0]
            approx = joint.posterior_means_batch(counts, sums)[0]
            np.testing.assert_allclose(approx, exact, atol=0.01)


class TestOrdering:
    def test_unordered_rejected(self):
        with pytest.raises(ArmOrderError):
            IndependentPrior([GaussianConjugate(0.5, 1), GaussianConjugate(1.0, 1)])

    def test_ordered_from_is_stable(self):
        arms = [BetaBernoulli(1, 1), BetaBernoulli(3, 1), BetaBernoulli(1, 1)]
        prior, order = IndependentPrior.ordered_from(arms)
        assert order == [1, 0, 2]
        assert np.all(np.diff(prior.means) <= 0)

    @given(st.lists(st.floats(0.05, 0.95), min_size=2, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_ordering_invariant(self, values):
        prior, _ = IndependentPrior.ordered_from([PointMassPrior(v) for v in values])
        assert np.all(np.diff(prior.means) <= 0)


class TestXk:
    def test_plug_in(self):
        assert xk_distribution(GAUSS, 1) == pytest.approx((-0.5, 0.5))

    def test_k_zero(self):
        assert xk_distribution(GAUSS, 0)[1] == 0.0

    def test_limit(self):
        assert abs(xk_distribution(GAUSS, 10**6)[1] - 1.0) < 1e-5

    @given(st.integers(0, 10_000), st.integers(0, 10_000))
    @settings(max_examples=50)
    def test_monotone_and_bounded(self, a, b):
        a, b = sorted((a, b))
        va, vb = xk_distribution(GAUSS, a)[1], xk_distribution(GAUSS, b)[1]
        assert va <= vb + 1e-15 and vb <= 1.0

    def test_monte_carlo_distribution(self):
        rng = derive_stream(0, 0, "xk")
        mu = GAUSS.sample_means(rng, 100_000)
        sums = GAUSS.sample_reward_sums(mu, [4, 0], rng)
        counts = np.broadcast_to([4, 0], mu.shape)
        pm = GAUSS.posterior_means_batch(counts, sums)
        x = pm[:, 1] - pm[:, 0]
        assert abs(x.mean() + 0.5) < 3 * x.std() / math.sqrt(len(x))
        assert abs(x.var() - 0.8) < 3 * 0.8 * math.sqrt(2 / len(x))


class TestPersuasionConstants:
    def test_offset_prior_not_persuadable(self):
        with pytest.raises(PriorNotPersuadable):
            estimate_persuasion_constants(offset_prior(0.2), 1, 2000, rng=derive_stream(0, 0, "c"))

    def test_gaussian_rho_near_zero_tau(self):
        reps = 100_000
        pc = estimate_persuasion_constants(GAUSS, 1, reps, rng=derive_stream(1, 0, "c"), stage="sampling")
        rho0 = pc.curves["sampling:1"][0]
        target = stats.norm.cdf(-0.5 / math.sqrt(0.5))
        assert target == pytest.approx(0.2398, abs=1e-4)
        assert abs(rho0 - target) < 3 * math.sqrt(target * (1 - target) / reps)

    def test_pointmass_pair(self):
        prior = IndependentPrior([PointMassPrior(0.3), PointMassPrior(0.9)], allow_unordered=True)
        pc = estimate_persuasion_constants(prior, 1, 5000, rng=derive_stream(2, 0, "c"), stage="sampling")
        assert 0.5 < pc.tau_P <= 0.6
        assert pc.rho_P > 0.99
        assert pc.curves["sampling:1"][pc.tau_grid <= 0.6].min() == 1.0

    def test_invariants(self):
        pc = estimate_persuasion_constants(GAUSS, 2, 5000, rng=derive_stream(3, 0, "c"))
        assert pc.tau_P > 0 and 0 < pc.rho_P <= 1 and pc.k_P == 2
        d = pc.to_dict()
        assert set(d) >= {"k_P", "tau_P", "rho_P", "replicates", "ci_level"}

    def test_too_few_replicates(self):
        with pytest.raises(ValueError):
            estimate_persuasion_constants(GAUSS, 1, 100)

    @pytest.mark.parametrize("prior", [GAUSS, IndependentPrior([BetaBernoulli(3, 2), BetaBernoulli(2, 2)])])
    def test_conditioning_helps(self, prior):
        tau = 0.02
        ga, sa = persuasion_gain(prior, 1, [2, 0], tau, derive_stream(4, 0, "g"), 40_000)
        gb, sb = persuasion_gain(prior, 1, [8, 0], tau, derive_stream(4, 1, "g"), 40_000)
        assert gb >= ga - 3 * math.hypot(sa, sb)


class TestPhaseLength:
    def test_gaussian_two_arm(self):
        assert min_phase_length_two_arm(GAUSS, 1) == 7

    def test_gaussian_closed_form_matches_monte_carlo(self):
        mean, var = xk_distribution(GAUSS, 1)
        s = math.sqrt(var)
        closed = mean * stats.norm.cdf(mean / s) + s * stats.norm.pdf(mean / s)
        assert closed == pytest.approx(0.0998, abs=1e-4)
        y = derive_stream(5, 0, "y").normal(mean, s, 1_000_000)
        assert np.maximum(y, 0).mean() == pytest.approx(closed, abs=5e-4)

    def test_equal_means(self):
        prior = IndependentPrior([PointMassPrior(0.5), PointMassPrior(0.5)])
        assert min_phase_length_two_arm(prior, 3) == 3

    def test_m_arm_pointmass(self):
        prior = IndependentPrior([PointMassPrior(0.9), PointMassPrior(0.1)])
        assert min_phase_length_m_arm(prior, PersuasionConstants(1, 0.8, 1.0), replicates=1000) == 3

    def test_m_arm_guard(self):
        with pytest.raises(PriorNotPersuadable):
            min_phase_length_m_arm(GAUSS, PersuasionConstants(1, 1e-8, 1e-8), replicates=1000)

    def test_expected_max(self):
        d, theta = 0.5, math.sqrt(2.0)
        exact = 1.0 * stats.norm.cdf(d / theta) + 0.5 * stats.norm.cdf(-d / theta) + theta * stats.norm.pdf(d / theta)
        est, _ = expected_max_mean(GAUSS, derive_stream(6, 0, "m"), 1_000_000)
        assert exact == pytest.approx(1.349, abs=1e-3)
        assert abs(est - exact) < 0.005


UNIFORM_HALF = IndependentPrior([BoundedGrid.uniform(1000), PointMassPrior(0.5, BERNOULLI)])


class TestDetailFreeThresholds:
    def test_two_arm_uniform(self):
        th = df_two_arm_thresholds(0.5, 0.5, 0.5, 0.125)
        assert th.C == 0.25 and th.beta == 0.03125 and th.k_star == 156
        assert th.k_star == math.ceil(32 * math.log(128))

    def test_cdf_point_estimate(self):
        est, lo = prob_two_arm_cdf(UNIFORM_HALF, 0.5, derive_stream(7, 0, "p"), 200_000)
        assert abs(est - 0.125) < 0.003 and lo < est

    def test_racing_uniform(self):
        theta, _ = racing_thresholds(0.2, 0.32, 10_000)
        assert theta == pytest.approx(62.5)
        prior = IndependentPrior([BoundedGrid.uniform(1000), BoundedGrid.uniform(1000)])
        est, _ = prob_race_margin(prior, 0.2, derive_stream(8, 0, "p"), 200_000)
        assert abs(est - 0.32) < 0.005

    def test_guards(self):
        with pytest.raises(PriorNotPersuadable):
            df_two_arm_thresholds(0.5, 0.5, 0.5, 0.0)
        with pytest.raises(ValueError):
            df_two_arm_thresholds(0.5, 0.5, 2 / 3, 0.1)
        with pytest.raises(PriorNotPersuadable):
            df_m_arm_thresholds(0.6, 0.4, 0.05, 0.0, 3)

    def test_n_p_is_max(self):
        th = detail_free_thresholds([0.6, 0.5, 0.4], 10_000, 0.2, 0.2, 0.1)
        assert th.N_P == max(th.k, th.L, math.ceil(th.theta), th.k_race)
        assert th.C == pytest.approx(0.4 / 6)

    @given(st.floats(0.01, 0.3), st.floats(0.01, 0.3), st.floats(0.01, 1), st.floats(0.01, 1))
    @settings(max_examples=60)
    def test_monotone(self, gap1, gap2, p1, p2):
        (g_lo, g_hi), (p_lo, p_hi) = sorted((gap1, gap2)), sorted((p1, p2))
        k_a, L_a = df_m_arm_thresholds(0.5 + g_lo, 0.5, 0.05, p_hi, 3)
        k_b, L_b = df_m_arm_thresholds(0.5 + g_hi, 0.5, 0.05, p_lo, 3)
        assert k_b >= k_a and L_b >= L_a
        assert racing_thresholds(0.2, p_lo, 1000)[1] >= racing_thresholds(0.2, p_hi, 1000)[1]


class TestChernoff:
    def test_consistency(self):
        assert chernoff_required_k(0.25, 0.5, 0.5, 0.125) == 156

    def test_tail_one(self):
        assert chernoff_required_k(0.5, 0.5, 0.5, 1.0) == 17

    def test_monotone_in_zeta(self):
        ks = [chernoff_required_k(0.25, z, 0.5, 0.125) for z in np.linspace(0.05, 0.95, 19)]
        assert all(a >= b for a, b in zip(ks, ks[1:]))

    def test_guard(self):
        with pytest.raises(ValueError):
            chernoff_required_k(0.25, 0.5, 0.5, 0.0)

    def test_hoeffding(self):
        assert hoeffding_tail(200, 0.1) == pytest.approx(2 * math.exp(-4), rel=1e-12)
        assert hoeffding_tail(200, 0.1) == pytest.approx(0.03663, abs=1e-5)
        assert hoeffding_tail(0, 1.0) == 2.0

    def test_hoeffding_empirical(self):
        x = derive_stream(9, 0, "h").binomial(200, 0.5, 100_000) / 200
        assert np.mean(np.abs(x - 0.5) >= 0.1) <= hoeffding_tail(200, 0.1)


def test_gaussian_family_grid_posterior():
    g = BoundedGrid.uniform(400, RewardFamily("gaussian", 0.25))
    assert 0.0 < g.posterior_mean(5, 2.5) < 1.0
