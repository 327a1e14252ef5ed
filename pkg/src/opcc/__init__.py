"""Offline policy comparison with confidence (OPCC) at desk scale.

The pipeline: collect an offline dataset in a small environment, build a set
of labeled policy-comparison queries, train a bootstrap ensemble of dynamics
models on the dataset, answer each query with a prediction and a confidence
value (ensemble voting or t-interval scores over per-member Monte-Carlo value
estimates), and score the confidence values with risk-coverage metrics.
"""

from .confidence import (METHODS, QueryAnswer, ValuePairs, answer_from_pairs,
                         confidence_ev, confidence_pci, confidence_upci,
                         estimate_value_pairs)
from .data import (Dataset, DatasetStats, Transition, bootstrap_resample,
                   collect_dataset, compute_stats, load_dataset, save_dataset)
from .dynamics import (BaseModelConfig, Ensemble, EnsembleMember,
                       TrainingDivergedError, load_ensemble, member_loss,
                       predict_next, predict_next_batch, rollout_value,
                       rollout_values_batch, save_ensemble, train_ensemble,
                       train_member)
from .envs import (ENV_IDS, ChainWorld, PointMaze, Rect, make_env,
                   random_policy, sample_initial_states, termination_for)
from .harness import (ExperimentConfig, aggregate_rows, build_behavior_dataset,
                      build_query_set, estimate_all_pairs, load_config,
                      parse_config, run_sweep)
from .mdp import (Policy, UnsupportedEnvError, ValueQuery, compose_first_action,
                  policy_value_dp, policy_value_mc, policy_value_mc_batched)
from .metrics import (AnsweredQuery, RiskCoverageCurve, ZeroCoverageError,
                      aurcc, build_rcc, coverage, coverage_resolution,
                      evaluate_answers, rpp, selective_risk, zero_one_loss)
from .queries import (CandidateQuery, EmptyQuerySetError, PolicyComparisonQuery,
                      PolicyOrderingError, QuerySet, generate_candidates,
                      label_filter_select, load_query_set, make_policy_family,
                      max_return, save_query_set)
from .tdist import betainc_reg, t_cdf, t_ppf

__version__ = "0.1.0"
