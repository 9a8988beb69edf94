"""Asymptotic variances from per-observation influence values.

Each variance is the sample mean of the squared influence value of an
observation, i.e. the variance of ``sqrt(n) (D_hat - D)``; divide by ``n``
for a squared standard error.  Projection-estimation corrections use
inverse Jacobians of the estimating equations, obtained by central
differences with respect to the free projection parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._validation import Dataset
from .config import PipelineConfig
from .exceptions import JacobianFailure, SDRError, VarianceFailure
from .projection import (
    FitResult,
    _kron_rows,
    final_outcome_curve,
    outcome_moments,
    propensity_moments,
    vecl_pack,
)
from .smoothing import nw_smooth

# inverse condition numbers below this count as singular
_RCOND = 1e-14


@dataclass
class InfluenceDecomposition:
    """Influence values and the named terms that sum to them."""

    per_obs: np.ndarray
    components: dict = field(default_factory=dict)

    @property
    def variance(self) -> float:
        return float(np.mean(self.per_obs**2))


@dataclass
class CorrectionMatrices:
    """Inverse Jacobians ``B*`` and the ``C``/``D`` gradient vectors."""

    B: Optional[np.ndarray] = None
    B0: Optional[np.ndarray] = None
    B1: Optional[np.ndarray] = None
    C0: Optional[np.ndarray] = None
    C1: Optional[np.ndarray] = None
    D0: Optional[np.ndarray] = None
    D1: Optional[np.ndarray] = None


def jacobian_numeric(moment_fn: Callable[[np.ndarray], np.ndarray], theta, step) -> np.ndarray:
    """Central-difference Jacobian, one column per coordinate of ``theta``.

    Raises
    ------
    JacobianFailure
        If the function fails or is not finite at a perturbed point.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        try:
            fp = np.asarray(moment_fn(theta + e), dtype=float)
            fm = np.asarray(moment_fn(theta - e), dtype=float)
        except SDRError as exc:
            raise JacobianFailure(f"evaluation failed at coordinate {j}: {exc}", j) from exc
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise JacobianFailure(f"non-finite value at coordinate {j}", j)
        cols.append((fp - fm) / (2.0 * step))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def _invert(J, label):
    if J.ndim != 2 or J.shape[0] != J.shape[1] or not np.all(np.isfinite(J)):
        raise VarianceFailure(f"{label}: Jacobian is not a finite square matrix")
    if J.size == 0 or np.linalg.cond(J) * _RCOND > 1:
        raise VarianceFailure(f"{label}: Jacobian is singular")
    try:
        return np.linalg.inv(J)
    except np.linalg.LinAlgError as exc:
        raise VarianceFailure(f"{label}: {exc}") from None


def _nw_at_sample(targets, z, bandwidth, family, n_threads):
    vals, ok = nw_smooth(targets, z, z, family, bandwidth, n_threads)
    if not np.all(ok):
        raise VarianceFailure("empty kernel window in a conditional expectation")
    return vals


@dataclass
class _OutcomePieces:
    arm: int
    m: np.ndarray
    dm: np.ndarray
    psi: np.ndarray
    xl: np.ndarray
    z: np.ndarray


def _outcome_pieces(data: Dataset, fit: FitResult, config: PipelineConfig):
    """Per-observation outcome estimating functions at the fitted curve."""
    B = fit.projection.matrix
    d = B.shape[1]
    z = data.X @ B
    xl = data.X[:, d:]
    sm = config.smoother
    E = _nw_at_sample(xl, z, fit.bandwidth_final, sm.family, sm.n_threads)
    sel = (data.t == fit.arm).astype(float)
    m = fit.curve.values
    dm = fit.curve.derivatives
    psi = _kron_rows((sel * (data.y - m))[:, None] * dm, xl - E)
    return _OutcomePieces(fit.arm, m, dm, psi, xl, z)


def _outcome_B(data, fit: FitResult, config: PipelineConfig, step):
    sm = config.smoother
    P = fit.projection

    def moments(theta):
        return outcome_moments(P.with_free(theta).matrix, data, fit.arm, fit.bandwidth_final,
                               sm.family, sm.n_threads)

    return _invert(jacobian_numeric(moments, vecl_pack(P), step), f"B{fit.arm}")


@dataclass
class _PropensityPieces:
    p: np.ndarray
    deta: np.ndarray
    psi: np.ndarray
    xl: np.ndarray
    z: np.ndarray


def _propensity_pieces(data: Dataset, fit: FitResult, config: PipelineConfig):
    A = fit.projection.matrix
    d = A.shape[1]
    z = data.X @ A
    xl = data.X[:, d:]
    sm = config.smoother
    E = _nw_at_sample(xl, z, fit.bandwidth_dim_red, sm.family, sm.n_threads)
    p = fit.propensity
    deta = fit.curve.derivatives
    psi = _kron_rows(deta, (data.t - p)[:, None] * (xl - E))
    return _PropensityPieces(p, deta, psi, xl, z)


def _propensity_B(data, fit: FitResult, config: PipelineConfig, step):
    sm = config.smoother
    P = fit.projection

    # one bandwidth (the dimension-reduction one) for the refit link and E[X_L | .]
    def moments(theta):
        return propensity_moments(P.with_free(theta).matrix, data, fit.bandwidth_dim_red,
                                  sm.family, sm.n_threads)

    return _invert(jacobian_numeric(moments, vecl_pack(P), step), "B")


def _imp_family(data, imp1, imp0, prop, ate, config, second):
    config = config or PipelineConfig()
    sm = config.smoother
    vc = config.variance
    h = vc.imp_num_deriv_h
    o1 = _outcome_pieces(data, imp1, config)
    o0 = _outcome_pieces(data, imp0, config)
    B1 = _outcome_B(data, imp1, config, h)
    B0 = _outcome_B(data, imp0, config, h)
    p = prop.propensity
    t, y = data.t, data.y
    w1 = _nw_at_sample(1.0 / p, o1.z, imp1.bandwidth_final, sm.family, sm.n_threads)[:, 0]
    w0 = _nw_at_sample(1.0 / (1.0 - p), o0.z, imp0.bandwidth_final, sm.family,
                       sm.n_threads)[:, 0]
    g1_rows = _kron_rows(o1.dm, o1.xl)
    g0_rows = _kron_rows(o0.dm, o0.xl)
    corr1 = o1.psi @ B1.T
    corr0 = o0.psi @ B0.T
    if second:
        c1 = corr1 @ g1_rows.mean(axis=0)
        c0 = corr0 @ g0_rows.mean(axis=0)
    elif vc.imp_weight_inside:
        c1 = corr1 @ ((1 - p)[:, None] * g1_rows).mean(axis=0)
        c0 = corr0 @ (p[:, None] * g0_rows).mean(axis=0)
    else:
        c1 = (1 - p) * (corr1 @ g1_rows.mean(axis=0))
        c0 = p * (corr0 @ g0_rows.mean(axis=0))
    comps = {
        "main": o1.m - o0.m - ate,
        "arm1_residual": w1 * t * (y - o1.m),
        "arm0_residual": -w0 * (1 - t) * (y - o0.m),
        "arm1_projection": -c1,
        "arm0_projection": c0,
    }
    return InfluenceDecomposition(sum(comps.values()), comps), CorrectionMatrices(B0=B0, B1=B1)


def imp_influence(data: Dataset, imp_fit_1: FitResult, imp_fit_0: FitResult,
                  propensity_fit: FitResult, ate: float, config: PipelineConfig = None):
    """Influence decomposition of the IMP estimator centred at ``ate``."""
    return _imp_family(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config, second=False)


def imp2_influence(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config=None):
    """Influence decomposition of the IMP2 estimator centred at ``ate``."""
    return _imp_family(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config, second=True)


def imp_var(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config=None) -> float:
    """Asymptotic variance of the IMP estimator.

    ``ate`` is the IMP point estimate used to centre the main term.  With
    ``config.variance.imp_weight_inside`` false the ``(1 - p)`` and ``p``
    factors of the projection terms multiply each observation's term
    instead of sitting inside the expectation.
    """
    return imp_influence(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config)[0].variance


def imp2_var(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config=None) -> float:
    """Asymptotic variance of the IMP2 estimator."""
    return imp2_influence(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config)[0].variance


def ipw_influence(data: Dataset, propensity_fit: FitResult, imp_fit_1: FitResult,
                  imp_fit_0: FitResult, ate: float, config: PipelineConfig = None):
    """Influence decomposition of the IPW estimator centred at ``ate``.

    Conditional expectations given the propensity index use the
    dimension-reduction bandwidth of the propensity fit.
    """
    config = config or PipelineConfig()
    sm = config.smoother
    pp = _propensity_pieces(data, propensity_fit, config)
    B = _propensity_B(data, propensity_fit, config, config.variance.ipw_num_deriv_h)
    p = pp.p
    t, y = data.t, data.y
    m1 = imp_fit_1.curve.values
    m0 = imp_fit_0.curve.values
    em = _nw_at_sample(np.column_stack([m1, m0]), pp.z, propensity_fit.bandwidth_dim_red,
                       sm.family, sm.n_threads)
    g = ((m1 * (1 - p) + m0 * p)[:, None] * _kron_rows(pp.deta, pp.xl)).mean(axis=0)
    comps = {
        "main": t * y / p - (1 - t) * y / (1 - p) - ate,
        "arm1_conditional": (1 - t / p) * em[:, 0],
        "arm0_conditional": -(t - p) / (1 - p) * em[:, 1],
        "propensity_projection": (pp.psi @ B.T) @ g,
    }
    return InfluenceDecomposition(sum(comps.values()), comps), CorrectionMatrices(B=B)


def ipw_var(data, propensity_fit, imp_fit_1, imp_fit_0, ate, config=None) -> float:
    """Asymptotic variance of the IPW estimator."""
    return ipw_influence(data, propensity_fit, imp_fit_1, imp_fit_0, ate, config)[0].variance


def _curve_jacobian(data, fit: FitResult, config: PipelineConfig, step):
    """Jacobian of the final fitted outcome values w.r.t. the free parameters."""
    sm = config.smoother
    P = fit.projection

    def values(theta):
        return final_outcome_curve(P.with_free(theta).matrix, data, fit.arm, fit.bandwidth_final,
                                   sm.family, sm.to_extrapolate, sm.extrapolation_basis,
                                   sm.to_truncate, sm.n_threads).values

    return jacobian_numeric(values, vecl_pack(P), step)


def aipw_influence(data: Dataset, imp_fit_1: FitResult, imp_fit_0: FitResult,
                   propensity_fit: FitResult, ate: float, config: PipelineConfig = None):
    """Influence decomposition shared by AIPW and AIPW2, centred at ``ate``."""
    config = config or PipelineConfig()
    vc = config.variance
    o1 = _outcome_pieces(data, imp_fit_1, config)
    o0 = _outcome_pieces(data, imp_fit_0, config)
    pp = _propensity_pieces(data, propensity_fit, config)
    B1 = _outcome_B(data, imp_fit_1, config, vc.imp_num_deriv_h)
    B0 = _outcome_B(data, imp_fit_0, config, vc.imp_num_deriv_h)
    B = _propensity_B(data, propensity_fit, config, vc.ipw_num_deriv_h)
    p = pp.p
    t, y = data.t, data.y
    J1 = _curve_jacobian(data, imp_fit_1, config, vc.aipw_num_deriv_h)
    J0 = _curve_jacobian(data, imp_fit_0, config, vc.aipw_num_deriv_h)
    C1 = (J1 * (1 - t / p)[:, None]).mean(axis=0)
    C0 = (J0 * (1 - (1 - t) / (1 - p))[:, None]).mean(axis=0)
    kx = _kron_rows(pp.deta, pp.xl)
    D1 = ((y - o1.m) * t * (1 - p) / p)[:, None] * kx
    D0 = ((y - o0.m) * (1 - t) * p / (1 - p))[:, None] * kx
    D1 = D1.mean(axis=0)
    D0 = D0.mean(axis=0)
    prop_corr = pp.psi @ B.T
    comps = {
        "main": o1.m - o0.m - ate,
        "arm1_residual": t * (y - o1.m) / p,
        "arm0_residual": -(1 - t) * (y - o0.m) / (1 - p),
        "arm1_projection": -(o1.psi @ B1.T) @ C1,
        "arm0_projection": (o0.psi @ B0.T) @ C0,
        "propensity_projection1": prop_corr @ D1,
        "propensity_projection0": prop_corr @ D0,
    }
    mats = CorrectionMatrices(B=B, B0=B0, B1=B1, C0=C0, C1=C1, D0=D0, D1=D1)
    return InfluenceDecomposition(sum(comps.values()), comps), mats


def aipw_var(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config=None) -> float:
    """Asymptotic variance of AIPW; the same value is reported for AIPW2."""
    return aipw_influence(data, imp_fit_1, imp_fit_0, propensity_fit, ate, config)[0].variance
