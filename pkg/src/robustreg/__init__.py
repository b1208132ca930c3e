"""Robust linear regression under adversarial response corruption.

Estimators recover coefficients from data where a substantial fraction of
the responses has been corrupted, by combining hard thresholding of the
corruption estimate with Gaussian-prior penalties (`trip_fit`) or with
variational Bayesian reweighting (`brht_fit`). The package also ships the
attack generators used to stress them, theory-side diagnostics, a periodic-
telemetry recovery pipeline, and a seeded experiment harness with a CLI.
"""

__version__ = "0.1.0"

from .core import (
    Dataset,
    SparseCorruption,
    hard_threshold,
    leverage_scores,
    ols,
    penalized_least_squares,
    residuals,
)
from .errors import (
    InvalidArgumentError,
    InvalidHyperparameterError,
    NumericError,
    SingularMatrixError,
    UnstableDeltaError,
)
from .priors import (
    BetaWeightPrior,
    CoefficientPrior,
    GammaWeightPrior,
    LogNormalWeightPrior,
    PenaltyMatrix,
    check_weight_hyperparams,
    data_driven_prior,
    lad_fit,
    min_weight_rate,
    penalty_from_prior,
    prior_from_penalty,
)
from .trip import FitReport, crr_fit, trip_fit, trip_objective
from .vbem import VariationalPosterior, e_step, expected_log_lik, m_step, vbem_fit
from .brht import brht_fit, objective_m, objective_u
from .attacks import CorruptionRecord, adca, lpa, oaa
from .diagnostics import (
    assumption1_trace,
    breakdown_bound,
    convergence_margin,
    ssc_sss,
)
from .harness import ExperimentConfig, convergence_trace, gen_instance, run_sweep
from .ssa import (
    ChebyshevModel,
    PeriodicSeries,
    SsaConfig,
    chebyshev_design,
    detect_jumps,
    extract_trend,
    fit_standard_period,
    recover_series,
    synth_ssa,
)
