"""Finite-sample minimax inference for treatment effects under limited overlap."""

from .asymptotic import AsymptoticCI, aipw, aipw_partial, select_epsilon
from .core_data import (Dataset, EstimandDecomposition, OverlapPartition,
                        ValidationError, decompose_estimand, estimate_noise_sd,
                        load_dataset_csv, overlap_measure, partition,
                        save_dataset_csv)
from .ball_program import SolverConvergenceError
from .lipschitz import (KNNRegressor, LipschitzClass, contextualize_L,
                        fit_default_regressor, pairwise_distances)
from .maxflow import MaxFlowInfeasibleError, max_flow_matrix
from .minimax_ci import (CombinedInterval, ConfidenceSequence,
                         ConfidenceSequenceEntry, IntervalReport,
                         InternalConsistencyError, alpha_schedule,
                         combine_intervals, confidence_sequence, cv_quantile,
                         estimator_value, m_interval, maxbias, metric_T,
                         minimax_interval, mp_interval, optimize_delta)
from .modulus import (DegenerateProblemError, ModulusProblem, ModulusSolution,
                      ToyConfig, analytic_modulus_oracle, matching_weights,
                      monotone_extrapolation_check, omega_derivative,
                      solve_modulus)
from .simulation import (CollectionParams, Example1Params, SamplingOption,
                         SyntheticRctParams, build_toy_dataset,
                         confseq_coverage_study, coverage_experiment,
                         evaluate_sampling_option, example1_lipschitz_bound,
                         propensity_map_E, rct_to_observational,
                         run_collection_confseq, simulate_collection,
                         simulate_example1, simulate_synthetic_rct, thin_rct,
                         toy_modulus_problem)

__version__ = "0.1.0"
