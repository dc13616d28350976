"""Estimation toolkit for on/off channel-occupancy traffic.

Library layout:

* :mod:`putraffic.traffic` - process model, trajectories, sampling,
  sensing corruption, stream serialization
* :mod:`putraffic.estimators` - duty-cycle and rate estimators
* :mod:`putraffic.accuracy` - closed-form MSE / CR bounds, asymptotes,
  exhaustive oracles
* :mod:`putraffic.design` - optimal schedules, optimal weights,
  convexity certificates
* :mod:`putraffic.blind` - blind estimation algorithms over live
  sample sources
* :mod:`putraffic.harness` - Monte Carlo experiments, presets, CSV
* :mod:`putraffic.cli` - command line front end
"""

from .errors import (
    DomainError,
    EnumerationLimitError,
    InfeasibleError,
    NoSolutionError,
    PuTrafficError,
    SourceExhaustedError,
    UndefinedEstimatorError,
)
from .traffic import (
    SampleSchedule,
    SampleStream,
    SensingModel,
    TrafficParams,
    Trajectory,
    corrupt,
    generate_trajectory,
    sample_trajectory,
    sensed_correlation,
    stationary_correlation,
    transition_matrix,
    transition_prob,
)
from .estimators import (
    Estimate,
    TransitionCounts,
    WeightVector,
    avg_estimate,
    avg_estimate_corrected,
    count_transitions,
    enumerated_log_likelihood,
    forward_log_likelihood,
    log_likelihood_u,
    ml_estimate_lambda_f,
    ml_estimate_lambda_n,
    ml_estimate_rate_noisy,
    ml_estimate_u,
    ml_estimate_u_noisy,
    weighted_estimate,
)
from .accuracy import (
    ErrorReport,
    FisherInfo,
    crb_lambda_f,
    crb_lambda_f_asymptote,
    crb_lambda_n,
    crb_lambda_n_asymptote,
    crb_u,
    crb_u_asymptote,
    fisher_lambda_f,
    fisher_lambda_n,
    fisher_u,
    mse_avg,
    mse_avg_corrected,
    mse_avg_decrement,
    mse_avg_decrement_max,
    mse_avg_uniform,
    mse_avg_uniform_asymptote,
    mse_weighted,
    mse_weighted_asymptote,
    mse_weighted_optimal,
    oracle_fisher_enumeration,
    oracle_mse_enumeration,
    required_samples,
)
from .design import (
    HessianMatrix,
    ScheduleSolution,
    kkt_residuals,
    mse_gradient,
    mse_hessian,
    optimal_schedule,
    optimal_schedule_mse,
    optimal_schedule_mse_formula,
    optimal_weights,
)
from .blind import (
    AlgoIConfig,
    AlgoIIConfig,
    EstimationTrace,
    MarkovSampler,
    ReplaySampler,
    SafetyCapExceeded,
    TrajectorySampler,
    run_algorithm_I,
    run_algorithm_I_batch,
    run_algorithm_II,
    run_algorithm_II_batch,
    simulated_source,
)

__version__ = "0.1.0"
