"""Point estimators of the average treatment effect.

Every estimator takes the observed sample plus fitted nuisance values
evaluated at all ``n`` sample points and returns an :class:`AteEstimate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import Dataset
from .exceptions import EstimatorInputError, GammaDegenerate
from .smoothing import SmoothedCurve, Status

ESTIMATOR_NAMES = ("IMP", "IMP2", "IPW", "AIPW", "AIPW2")


@dataclass
class AteEstimate:
    """``ate`` is always ``e_y1 - e_y0``."""

    estimator: str
    e_y1: float
    e_y0: float
    gamma1: Optional[float] = None
    gamma0: Optional[float] = None

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_NAMES:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        self.e_y1 = float(self.e_y1)
        self.e_y0 = float(self.e_y0)

    @property
    def ate(self) -> float:
        return self.e_y1 - self.e_y0


@dataclass
class NuisanceBundle:
    """Fitted outcome curves and propensities at every sample point."""

    m1: SmoothedCurve
    m0: SmoothedCurve
    propensity: np.ndarray
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.propensity = np.asarray(self.propensity, dtype=float)
        if self.m1.values.shape != self.m0.values.shape or \
                self.m1.values.shape != self.propensity.shape:
            raise EstimatorInputError("nuisance curves and propensities must cover the same points")
        for name, c in (("m1", self.m1), ("m0", self.m0)):
            self.flags.setdefault(f"{name}_interpolated",
                                  int(np.count_nonzero(c.status == Status.INTERPOLATED)))
            self.flags.setdefault(f"{name}_extrapolated",
                                  int(np.count_nonzero(c.status == Status.EXTRAPOLATED)))


def _values(curve_or_array, n, name):
    v = curve_or_array.values if isinstance(curve_or_array, SmoothedCurve) else curve_or_array
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise EstimatorInputError(f"{name} must have one value per observation ({n})")
    if not np.all(np.isfinite(v)):
        raise EstimatorInputError(f"{name} contains non-finite values")
    return v


def _check_propensity(p, n):
    p = _values(p, n, "propensity")
    if np.any(p <= 0) or np.any(p >= 1):
        raise EstimatorInputError("propensity scores must lie strictly inside (0, 1)")
    return p


def imp_ate(data: Dataset, m1, m0):
    """Imputation estimators.

    Returns
    -------
    imp : AteEstimate
        Observed outcomes where available, imputed values otherwise.
    imp2 : AteEstimate
        Imputed values everywhere.
    """
    t, y = data.t, data.y
    v1 = _values(m1, data.n, "m1")
    v0 = _values(m0, data.n, "m0")
    imp = AteEstimate("IMP", np.mean(t * y + (1 - t) * v1), np.mean((1 - t) * y + t * v0))
    imp2 = AteEstimate("IMP2", np.mean(v1), np.mean(v0))
    return imp, imp2


def ipw_ate(data: Dataset, propensity) -> AteEstimate:
    """Inverse probability weighting estimator."""
    p = _check_propensity(propensity, data.n)
    t, y = data.t, data.y
    return AteEstimate("IPW", np.mean(t * y / p), np.mean((1 - t) * y / (1 - p)))


def aipw_ate(data: Dataset, bundle: NuisanceBundle) -> AteEstimate:
    """Augmented inverse probability weighting estimator."""
    p = _check_propensity(bundle.propensity, data.n)
    v1 = _values(bundle.m1, data.n, "m1")
    v0 = _values(bundle.m0, data.n, "m0")
    t, y = data.t, data.y
    e1 = np.mean(t * y / p + (1 - t / p) * v1)
    e0 = np.mean((1 - t) * y / (1 - p) + (1 - (1 - t) / (1 - p)) * v0)
    return AteEstimate("AIPW", e1, e0)


def _cov(a, b):
    return float(np.cov(a, b, ddof=1)[0, 1])


def aipw_gammas(data: Dataset, bundle: NuisanceBundle):
    """Covariance-ratio weights of the improved AIPW estimator.

    Raises
    ------
    GammaDegenerate
        If either denominator covariance is zero or not finite.
    """
    p = _check_propensity(bundle.propensity, data.n)
    v1 = _values(bundle.m1, data.n, "m1")
    v0 = _values(bundle.m0, data.n, "m0")
    t, y = data.t, data.y
    aug1 = (1 - t / p) * v1
    aug0 = (t - p) / (1 - p) * v0
    den1 = _cov(v1 * t / p, aug1)
    den0 = _cov((1 - t) / (1 - p) * v0, aug0)
    if not (np.isfinite(den1) and np.isfinite(den0)) or den1 == 0 or den0 == 0:
        raise GammaDegenerate("zero covariance in the gamma denominator")
    return _cov(t * y / p, aug1) / den1, _cov((1 - t) * y / (1 - p), aug0) / den0


def aipw2_ate(data: Dataset, bundle: NuisanceBundle) -> AteEstimate:
    """Improved AIPW estimator with covariance-ratio augmentation weights."""
    g1, g0 = aipw_gammas(data, bundle)
    p = bundle.propensity
    v1 = bundle.m1.values
    v0 = bundle.m0.values
    t, y = data.t, data.y
    e1 = np.mean(t * y / p + g1 * (1 - t / p) * v1)
    e0 = np.mean((1 - t) * y / (1 - p) + g0 * (1 - (1 - t) / (1 - p)) * v0)
    return AteEstimate("AIPW2", e1, e0, gamma1=g1, gamma0=g0)
