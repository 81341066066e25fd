"""Bayesian incentive-compatible bandit exploration.

Sampling stages, the black-box reduction, detail-free racing, the
contextual reduction, prior constants and a statistical BIC audit.
"""

from .baselines import (ActiveArmsElimination, BanditAlgorithm, Constant, Environment, EpsilonGreedyPolicies,
                        ExploreThenCommit, Greedy, ProtocolChecked, UCB1, UniformRandom, make_algorithm,
                        run_standalone)
from .bic_core import ReductionConfig, run_black_box_reduction, run_m_arm_sampler, run_two_arm_sampler
from .contextual import (ContextSpace, ContextualPrior, PolicyClass, arm_rank, contextual_regret,
                         estimate_contextual_persuasion, run_contextual_reduction)
from .detail_free import (DetailFreeConfig, run_detail_free, run_df_race_m, run_df_sampling_m,
                          run_df_two_arm_race, run_df_two_arm_sampling)
from .harness import AuditReport, audit_bic, check_prediction_coupling, run_experiment
from .metrics import RegretCurve, avg_reward_window, bayes_regret, expost_regret
from .model import (BERNOULLI, NULL_PREDICTION, POINTMASS, MabInstance, RewardFamily, Transcript,
                    derive_stream, draw_reward, sample_instance)
from .priors import (BetaBernoulli, BoundedGrid, GaussianConjugate, IndependentPrior, JointPrior,
                     PersuasionConstants, PointMassPrior, PriorNotPersuadable, SampleSet, chernoff_required_k,
                     detail_free_thresholds, estimate_persuasion_constants, hoeffding_tail,
                     min_phase_length_m_arm, min_phase_length_two_arm, offset_prior, posterior_mean,
                     xk_distribution)

__version__ = "0.1.0"
