"""Estimation pipeline and scikit-learn style estimators.

:func:`run_pipeline` fits the two outcome projections and the propensity
projection once each and derives every requested estimator and variance
from them.  The estimator classes wrap the same machinery behind
``fit``/``predict``/``transform``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import estimators, variance
from ._validation import Dataset, check_covariates, check_dataset, check_treatment
from .config import InitialGuesses, PipelineConfig, SmootherConfig
from .exceptions import (
    ConfigurationError,
    EstimatorInputError,
    GammaDegenerate,
    SDRError,
)
from .kernels import DEFAULT_EXPONENT
from .projection import PROPENSITY_CLIP, PenaltyConfig, fit_outcome, fit_propensity
from .smoothing import (
    SmoothedCurve,
    Status,
    _local_linear,
    _local_logistic,
    _Sample,
    boundary_extrapolate,
    truncate_fit,
)

logger = logging.getLogger(__name__)

WHICH = ("imp", "ipw", "aipw", "aipw2")
STAGES = ("imp", "ipw")


def normalize_which(which) -> tuple:
    """Expand ``"all"`` and validate estimator names; keeps canonical order."""
    if isinstance(which, str):
        which = [w for w in which.replace(" ", "").split(",") if w]
    names = {w.lower() for w in which}
    if "all" in names:
        names = set(WHICH)
    bad = names - set(WHICH)
    if bad or not names:
        raise ConfigurationError(
            f"unknown estimator selection {sorted(bad) or which!r}; choose from {WHICH + ('all',)}")
    return tuple(w for w in WHICH if w in names)


@dataclass
class PipelineResult:
    """Fits, point estimates, variances and diagnostics of one run."""

    data: Dataset
    config: PipelineConfig
    which: tuple
    fits: dict
    bundle: estimators.NuisanceBundle
    estimates: dict = field(default_factory=dict)
    variances: dict = field(default_factory=dict)
    influence: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    implicit_stages: tuple = ()


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SDRError as exc:
        exc.stage = name
        raise


def _outcome_kwargs(config: PipelineConfig, arm):
    sm, imp, opt = config.smoother, config.imp, config.optimizer
    return dict(
        bwc_dim_red=imp.bwc_dim_red1 if arm == 1 else imp.bwc_dim_red0,
        bwc_impute=imp.bwc_impute1 if arm == 1 else imp.bwc_impute0,
        explicit_bandwidth=sm.explicit_bandwidth, recalc_bandwidth=imp.recalc_bandwidth,
        family=sm.family, penalty=PenaltyConfig(imp.penalty, imp.n_before_pen),
        optimizer=opt.algorithm, optimizer_options=opt.options(),
        to_extrapolate=sm.to_extrapolate, extrapolation_basis=sm.extrapolation_basis,
        to_truncate=sm.to_truncate, bandwidth_exponent=sm.bandwidth_exponent,
        n_threads=sm.n_threads)


def _propensity_kwargs(config: PipelineConfig):
    sm, ipw, opt = config.smoother, config.ipw, config.optimizer
    return dict(
        bwc_dim_red=ipw.bwc_dim_red, bwc_prop_score=ipw.bwc_prop_score,
        explicit_bandwidth=sm.explicit_bandwidth, recalc_bandwidth=ipw.recalc_bandwidth,
        family=sm.family, penalty=PenaltyConfig(ipw.penalty, ipw.n_before_pen),
        optimizer=opt.algorithm, optimizer_options=opt.options(),
        extrapolation_basis=sm.extrapolation_basis, bandwidth_exponent=sm.bandwidth_exponent,
        n_threads=sm.n_threads)


def _require(guess, name):
    if guess is None:
        raise ConfigurationError(f"initial guess {name!r} is required")
    return np.asarray(guess, dtype=float)


def fit_nuisance(data: Dataset, config: PipelineConfig):
    """Fit both outcome projections and the propensity projection."""
    init = config.initial
    b1 = _require(init.beta_guess1, "beta_guess1")
    b0 = _require(init.beta_guess0, "beta_guess0")
    a0 = _require(init.alpha_initial, "alpha_initial")
    fits = {
        "imp1": _stage("imp1", fit_outcome, data, 1, b1, **_outcome_kwargs(config, 1)),
        "imp0": _stage("imp0", fit_outcome, data, 0, b0, **_outcome_kwargs(config, 0)),
        "ipw": _stage("ipw", fit_propensity, data, a0, **_propensity_kwargs(config)),
    }
    bundle = estimators.NuisanceBundle(
        fits["imp1"].curve, fits["imp0"].curve, fits["ipw"].propensity,
        {"propensity_repaired": int(np.count_nonzero(fits["ipw"].curve.status != Status.OK))})
    return fits, bundle


def run_pipeline(data: Dataset, config: PipelineConfig = None, which="all",
                 with_variance=True) -> PipelineResult:
    """Fit all nuisance models once and compute the requested estimators.

    Variances need both the outcome and the propensity fits, so both stages
    always run; stages not implied by ``which`` are listed in
    ``implicit_stages``.  A degenerate AIPW2 weight falls back to AIPW and
    sets ``flags["aipw2_fallback"]``.
    """
    config = config or PipelineConfig()
    which = normalize_which(which)
    data = check_dataset(data.X, data.y, data.t)
    requested = set()
    if "imp" in which:
        requested.add("imp")
    if "ipw" in which:
        requested.add("ipw")
    implicit = tuple(s for s in STAGES if s not in requested)
    fits, bundle = fit_nuisance(data, config)
    res = PipelineResult(data, config, which, fits, bundle, implicit_stages=implicit,
                         flags={"aipw2_fallback": False})
    est, var, infl = res.estimates, res.variances, res.influence
    f1, f0, fp = fits["imp1"], fits["imp0"], fits["ipw"]
    if "imp" in which:
        est["IMP"], est["IMP2"] = _stage("imp", estimators.imp_ate, data, bundle.m1, bundle.m0)
    if "ipw" in which:
        est["IPW"] = _stage("ipw", estimators.ipw_ate, data, bundle.propensity)
    if "aipw" in which or "aipw2" in which:
        aipw = _stage("aipw", estimators.aipw_ate, data, bundle)
        if "aipw" in which:
            est["AIPW"] = aipw
        if "aipw2" in which:
            try:
                est["AIPW2"] = estimators.aipw2_ate(data, bundle)
            except GammaDegenerate as exc:
                logger.warning("AIPW2 weights degenerate (%s); reporting AIPW", exc)
                res.flags["aipw2_fallback"] = True
                est["AIPW2"] = estimators.AteEstimate("AIPW2", aipw.e_y1, aipw.e_y0)
    if not with_variance:
        return res
    if "imp" in which:
        infl["IMP"], _ = _stage("imp_var", variance.imp_influence, data, f1, f0, fp,
                                est["IMP"].ate, config)
        infl["IMP2"], _ = _stage("imp2_var", variance.imp2_influence, data, f1, f0, fp,
                                 est["IMP2"].ate, config)
    if "ipw" in which:
        infl["IPW"], _ = _stage("ipw_var", variance.ipw_influence, data, fp, f1, f0,
                                est["IPW"].ate, config)
    if "aipw" in which or "aipw2" in which:
        centre = aipw.ate
        infl["AIPW"], _ = _stage("aipw_var", variance.aipw_influence, data, f1, f0, fp,
                                 centre, config)
    for name, d in infl.items():
        var[name] = d.variance
    if "AIPW" in var and "aipw" not in which:
        del var["AIPW"]
    if "aipw2" in which:
        var["AIPW2"] = infl["AIPW"].variance
    return res


# ---------------------------------------------------------------------------
# scikit-learn style estimators


class _SmootherParams:
    """Shared smoother hyper-parameters (mixed into the estimators)."""

    def _smoother(self):
        return SmootherConfig(kernel=self.kernel, gauss_cutoff=self.gauss_cutoff,
                              explicit_bandwidth=self.explicit_bandwidth,
                              bandwidth_exponent=self.bandwidth_exponent,
                              extrapolation_basis=self.extrapolation_basis,
                              n_threads=self.n_threads)


class SDROutcomeRegressor(_SmootherParams, RegressorMixin, BaseEstimator):
    """Single-index (or two-index) outcome regression for one treatment arm.

    Parameters
    ----------
    beta_init : array-like of shape (p,) or (p, d)
        Initial projection; its upper d x d block stays fixed.
    arm : {0, 1}
        Treatment arm whose outcomes are modelled.
    bwc_dim_red, bwc_impute : float
        Bandwidth scales for the projection search and the final curve.

    Attributes
    ----------
    projection_ : ndarray of shape (p, d)
    bandwidth_ : tuple of float
        Final smoothing bandwidth.
    fit_result_ : FitResult
    """

    def __init__(self, beta_init=None, arm=1, bwc_dim_red=1.0, bwc_impute=1.25,
                 explicit_bandwidth=False, recalc_bandwidth=False, kernel="EPAN",
                 gauss_cutoff=1e-3, bandwidth_exponent=DEFAULT_EXPONENT, penalty=10.0,
                 n_before_pen=5, method="nelder-mead", max_iter=500, to_extrapolate=True,
                 extrapolation_basis=5, to_truncate=True, n_threads=1):
        self.beta_init = beta_init
        self.arm = arm
        self.bwc_dim_red = bwc_dim_red
        self.bwc_impute = bwc_impute
        self.explicit_bandwidth = explicit_bandwidth
        self.recalc_bandwidth = recalc_bandwidth
        self.kernel = kernel
        self.gauss_cutoff = gauss_cutoff
        self.bandwidth_exponent = bandwidth_exponent
        self.penalty = penalty
        self.n_before_pen = n_before_pen
        self.method = method
        self.max_iter = max_iter
        self.to_extrapolate = to_extrapolate
        self.extrapolation_basis = extrapolation_basis
        self.to_truncate = to_truncate
        self.n_threads = n_threads

    def fit(self, X, y, treated=None):
        X = check_covariates(X)
        if treated is None:
            treated = np.full(X.shape[0], float(self.arm))
        if self.arm not in (0, 1):
            raise ConfigurationError("arm must be 0 or 1")
        data = check_dataset(X, y, treated, require_both=False)
        if self.beta_init is None:
            raise ConfigurationError("beta_init is required")
        sm = self._smoother()
        self.fit_result_ = fit_outcome(
            data, self.arm, np.asarray(self.beta_init, dtype=float),
            bwc_dim_red=self.bwc_dim_red, bwc_impute=self.bwc_impute,
            explicit_bandwidth=self.explicit_bandwidth, recalc_bandwidth=self.recalc_bandwidth,
            family=sm.family, penalty=PenaltyConfig(self.penalty, self.n_before_pen),
            optimizer=self.method, optimizer_options={"max_iter": self.max_iter},
            to_extrapolate=self.to_extrapolate, extrapolation_basis=self.extrapolation_basis,
            to_truncate=self.to_truncate, bandwidth_exponent=self.bandwidth_exponent,
            n_threads=self.n_threads)
        mask = data.t == self.arm
        self._z_train = np.ascontiguousarray((data.X @ self.projection_)[mask])
        self._y_train = np.ascontiguousarray(data.y[mask])
        # unrepaired, untruncated curve at every sample point: the repair reference
        self._reference = _local_linear(
            _Sample(self._z_train), self._y_train, np.ascontiguousarray(data.X @ self.projection_),
            self._smoother().family, self.fit_result_.bandwidth_final, self.n_threads)
        self.n_features_in_ = data.p
        return self

    @property
    def projection_(self):
        return self.fit_result_.projection.matrix

    @property
    def bandwidth_(self):
        return self.fit_result_.bandwidth_final.resolved

    def transform(self, X):
        """Project covariates onto the fitted index."""
        check_is_fitted(self, "fit_result_")
        return check_covariates(X, min_rows=1) @ self.projection_

    def predict(self, X):
        """Fitted regression function at the projected ``X``."""
        z = np.ascontiguousarray(self.transform(X))
        sm = self._smoother()
        curve = _local_linear(_Sample(self._z_train), self._y_train, z, sm.family,
                              self.fit_result_.bandwidth_final, self.n_threads)
        if curve.n_failed and self.to_extrapolate:
            curve = _repair_with_reference(curve, self._reference, self.extrapolation_basis)
        if self.to_truncate:
            curve = truncate_fit(curve, self._y_train)
        if curve.n_failed:
            raise EstimatorInputError(f"{curve.n_failed} prediction points could not be smoothed")
        return curve.values


def _repair_with_reference(curve: SmoothedCurve, reference: SmoothedCurve, basis_count):
    """Repair failed query points from the successful training-curve points only."""
    ref_ok = reference.status == Status.OK
    bad = np.flatnonzero(curve.status == Status.FAILED)
    merged = SmoothedCurve(
        np.vstack([reference.eval_points[ref_ok], curve.eval_points[bad]]),
        np.concatenate([reference.values[ref_ok], curve.values[bad]]),
        np.vstack([reference.derivatives[ref_ok], curve.derivatives[bad]]),
        np.concatenate([reference.status[ref_ok], curve.status[bad]]))
    fixed = boundary_extrapolate(merged, basis_count)
    k = int(ref_ok.sum())
    out = curve.copy()
    out.values[bad] = fixed.values[k:]
    out.derivatives[bad] = fixed.derivatives[k:]
    out.status[bad] = fixed.status[k:]
    return out


class SDRPropensityClassifier(_SmootherParams, ClassifierMixin, BaseEstimator):
    """Single-index propensity score model with a local logistic link.

    Attributes
    ----------
    classes_ : ndarray ``[0, 1]``
    projection_ : ndarray of shape (p, d)
    """

    def __init__(self, alpha_init=None, bwc_dim_red=1.0, bwc_prop_score=10.0,
                 explicit_bandwidth=False, recalc_bandwidth=True, kernel="EPAN",
                 gauss_cutoff=1e-3, bandwidth_exponent=DEFAULT_EXPONENT, penalty=10.0,
                 n_before_pen=1, method="nelder-mead", max_iter=500, extrapolation_basis=5,
                 n_threads=1):
        self.alpha_init = alpha_init
        self.bwc_dim_red = bwc_dim_red
        self.bwc_prop_score = bwc_prop_score
        self.explicit_bandwidth = explicit_bandwidth
        self.recalc_bandwidth = recalc_bandwidth
        self.kernel = kernel
        self.gauss_cutoff = gauss_cutoff
        self.bandwidth_exponent = bandwidth_exponent
        self.penalty = penalty
        self.n_before_pen = n_before_pen
        self.method = method
        self.max_iter = max_iter
        self.extrapolation_basis = extrapolation_basis
        self.n_threads = n_threads

    def fit(self, X, t):
        X = check_covariates(X)
        t = check_treatment(t, X.shape[0])
        if self.alpha_init is None:
            raise ConfigurationError("alpha_init is required")
        data = Dataset(X, np.zeros(X.shape[0]), t)
        sm = self._smoother()
        self.fit_result_ = fit_propensity(
            data, np.asarray(self.alpha_init, dtype=float), bwc_dim_red=self.bwc_dim_red,
            bwc_prop_score=self.bwc_prop_score, explicit_bandwidth=self.explicit_bandwidth,
            recalc_bandwidth=self.recalc_bandwidth, family=sm.family,
            penalty=PenaltyConfig(self.penalty, self.n_before_pen), optimizer=self.method,
            optimizer_options={"max_iter": self.max_iter},
            extrapolation_basis=self.extrapolation_basis,
            bandwidth_exponent=self.bandwidth_exponent, n_threads=self.n_threads)
        self._z_train = np.ascontiguousarray(X @ self.projection_)
        self._t_train = np.ascontiguousarray(t)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def projection_(self):
        return self.fit_result_.projection.matrix

    def transform(self, X):
        check_is_fitted(self, "fit_result_")
        return check_covariates(X, min_rows=1) @ self.projection_

    def predict_proba(self, X):
        """Columns are ``P(t = 0)`` and ``P(t = 1)``."""
        z = np.ascontiguousarray(self.transform(X))
        sm = self._smoother()
        curve = _local_logistic(_Sample(self._z_train), self._t_train, z, sm.family,
                                self.fit_result_.bandwidth_final, self.n_threads)
        if curve.n_failed:
            curve = _repair_with_reference(curve, self._reference, self.extrapolation_basis)
        p = np.clip(expit(curve.values), PROPENSITY_CLIP, 1 - PROPENSITY_CLIP)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] > 0.5).astype(int)]


class SDRAverageTreatmentEffect(BaseEstimator):
    """All ATE estimators from one set of nuisance fits.

    Parameters
    ----------
    beta_guess1, beta_guess0, alpha_initial : array-like
        Initial projections; override those in ``config.initial``.
    config : PipelineConfig, optional
    which : str or sequence
        Estimators to compute (``"all"`` or a subset of imp/ipw/aipw/aipw2).

    Attributes
    ----------
    result_ : PipelineResult
    ate_ : dict
        Point estimate per estimator name.
    variance_ : dict
    """

    def __init__(self, beta_guess1=None, beta_guess0=None, alpha_initial=None, config=None,
                 which="all"):
        self.beta_guess1 = beta_guess1
        self.beta_guess0 = beta_guess0
        self.alpha_initial = alpha_initial
        self.config = config
        self.which = which

    def _resolved_config(self):
        cfg = copy.deepcopy(self.config) if self.config is not None else PipelineConfig()
        init = cfg.initial
        cfg.initial = InitialGuesses(
            _as_list(self.beta_guess1, init.beta_guess1),
            _as_list(self.beta_guess0, init.beta_guess0),
            _as_list(self.alpha_initial, init.alpha_initial))
        return cfg

    def fit(self, X, y, treated):
        data = check_dataset(X, y, treated)
        self.result_ = run_pipeline(data, self._resolved_config(), self.which)
        self.ate_ = {k: v.ate for k, v in self.result_.estimates.items()}
        self.variance_ = dict(self.result_.variances)
        self.n_features_in_ = data.p
        return self

    def confidence_intervals(self, level=0.95):
        """Normal-approximation intervals ``ate -/+ z sqrt(var / n)``."""
        check_is_fitted(self, "result_")
        zq = norm.ppf(0.5 + level / 2)
        n = self.result_.data.n
        return {k: (self.ate_[k] - zq * np.sqrt(v / n), self.ate_[k] + zq * np.sqrt(v / n))
                for k, v in self.variance_.items()}


def _as_list(value, fallback):
    if value is None:
        return fallback
    return np.asarray(value, dtype=float).tolist()
