"""Average treatment effect estimation with sufficient dimension reduction.

Outcome regressions and the propensity score are modelled as smooth
functions of low-dimensional linear projections of the covariates.  The
projections are estimated from semiparametric estimating equations, the
link functions by kernel smoothing, and the average treatment effect by
imputation (IMP, IMP2), inverse probability weighting (IPW) and augmented
weighting (AIPW, AIPW2), each with an influence-function variance.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, Study1Config, load_config
from .estimators import AteEstimate, NuisanceBundle, aipw2_ate, aipw_ate, imp_ate, ipw_ate
from .exceptions import (
    ConfigurationError,
    DataParseError,
    DegenerateFit,
    DegenerateProjection,
    EmptyWindow,
    EstimatorInputError,
    GammaDegenerate,
    JacobianFailure,
    MissingStage,
    SDRError,
    UnrecoverableFit,
    VarianceFailure,
)
from .kernels import Bandwidth, KernelFamily, kernel_eval, resolve_bandwidth
from .models import (
    PipelineResult,
    SDRAverageTreatmentEffect,
    SDROutcomeRegressor,
    SDRPropensityClassifier,
    run_pipeline,
)
from .projection import (
    FitResult,
    PenaltyConfig,
    ProjectionMatrix,
    fit_outcome,
    fit_projection,
    fit_propensity,
    outcome_objective,
    propensity_objective,
    vecl_pack,
    vecl_unpack,
)
from .simulation import generate_study1, run_replications, true_ate_oracle
from .smoothing import (
    SmoothedCurve,
    Status,
    boundary_extrapolate,
    local_linear_fit,
    local_logistic_fit,
    nw_conditional_mean,
    truncate_fit,
)
from .variance import aipw_var, imp2_var, imp_var, ipw_var, jacobian_numeric

__all__ = [name for name in dir() if not name.startswith("_")]
