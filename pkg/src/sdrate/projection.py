"""Projection matrices, estimating-equation objectives and the two-phase fit.

A p x d projection is identified by freezing its upper d x d block; the free
parameters are the lower (p - d) x d block flattened column by column
("vecl").  The outcome and propensity objectives are the squared norm of
the summed sample estimating functions plus a penalty that grows
geometrically with the number of smoother failures.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from . import optimizers
from ._validation import Dataset, check_projection_shape
from .exceptions import DegenerateFit, DegenerateProjection, EstimatorInputError
from .kernels import DEFAULT_EXPONENT, Bandwidth, KernelFamily, resolve_bandwidth
from .smoothing import (
    SmoothedCurve,
    Status,
    _local_linear,
    _local_logistic,
    _Sample,
    boundary_extrapolate,
    nw_smooth,
    truncate_fit,
)

logger = logging.getLogger(__name__)

PROPENSITY_CLIP = 1e-6


@dataclass
class ProjectionMatrix:
    """A p x d projection split into a frozen upper block and free lower block."""

    fixed_block: np.ndarray
    free_block: np.ndarray

    def __post_init__(self):
        self.fixed_block = np.atleast_2d(np.asarray(self.fixed_block, dtype=float))
        self.free_block = np.asarray(self.free_block, dtype=float)
        if self.free_block.ndim == 1:
            self.free_block = self.free_block[:, None]
        d = self.fixed_block.shape[0]
        if self.fixed_block.shape != (d, d) or d not in (1, 2):
            raise ValueError("fixed_block must be d x d with d in (1, 2)")
        if self.free_block.ndim != 2 or self.free_block.shape[1] != d or self.free_block.shape[0] < 1:
            raise ValueError(f"free_block must be (p - d) x {d}")

    @classmethod
    def from_matrix(cls, M) -> "ProjectionMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        d = M.shape[1]
        return cls(M[:d].copy(), M[d:].copy())

    @property
    def d(self) -> int:
        return self.fixed_block.shape[0]

    @property
    def p(self) -> int:
        return self.d + self.free_block.shape[0]

    @property
    def n_free(self) -> int:
        return self.free_block.size

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([self.fixed_block, self.free_block])

    def with_free(self, theta) -> "ProjectionMatrix":
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_free:
            raise ValueError(f"expected {self.n_free} free parameters, got {theta.size}")
        return ProjectionMatrix(self.fixed_block.copy(),
                                theta.reshape(self.free_block.shape, order="F"))


def vecl_pack(P: ProjectionMatrix) -> np.ndarray:
    """Column-major flattening of the free block."""
    return P.free_block.ravel(order="F").copy()


def vecl_unpack(theta, template: ProjectionMatrix) -> ProjectionMatrix:
    return template.with_free(theta)


@dataclass(frozen=True)
class PenaltyConfig:
    """``base ** (failures - allowance)`` once failures exceed the allowance."""

    base: float = 10.0
    allowance: int = 5

    def __post_init__(self):
        if not self.base > 1:
            raise ValueError("penalty base must be > 1")
        if self.allowance < 0:
            raise ValueError("penalty allowance must be >= 0")

    def __call__(self, failures: int) -> float:
        if failures <= self.allowance:
            return 0.0
        return _capped_power(self.base, failures - self.allowance)

    def sentinel(self, n: int) -> float:
        return _capped_power(self.base, n)


def _capped_power(base, k):
    if k * math.log10(base) >= 308:
        return sys.float_info.max
    return float(base) ** k


@dataclass
class ObjectiveConfig:
    """Everything an objective needs besides the data and the parameters."""

    template: ProjectionMatrix
    bandwidth: Bandwidth
    family: KernelFamily = field(default_factory=KernelFamily)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    n_threads: int = 1


def _kron_rows(a, b):
    """Row-wise Kronecker product: row i is ``kron(a[i], b[i])``."""
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def _check_spread(z):
    if z.shape[0] < 2 or np.any(np.ptp(z, axis=0) == 0):
        raise DegenerateProjection("projected covariates are constant")


def outcome_terms(B, data: Dataset, arm: int, bandwidth: Bandwidth, family: KernelFamily,
                  n_threads=1):
    """Per-observation outcome estimating functions for one arm.

    Row ``i`` is ``1{t_i = arm} (y_i - m(z_i)) kron(m'(z_i), x_Li - E[X_L | z_i])``
    with the smoother refitted at projection ``B``.  Rows outside the arm or
    where the local linear fit failed are zero.

    Returns
    -------
    terms : ndarray of shape (n, d * (p - d))
    failed : ndarray of bool, shape (n,)
        True where the arm's local linear fit failed.
    """
    B = np.asarray(B, dtype=float)
    d = B.shape[1]
    z = data.X @ B
    mask = data.t == arm
    zs = z[mask]
    _check_spread(zs)
    ys = np.ascontiguousarray(data.y[mask])
    curve = _local_linear(_Sample(zs), ys, zs, family, bandwidth, n_threads)
    xl_all = data.X[:, d:]
    E, ok_e = nw_smooth(xl_all, z, zs, family, bandwidth, n_threads)
    ok = (curve.status == Status.OK) & ok_e
    resid = np.where(ok, ys - curve.values, 0.0)
    deriv = np.where(ok[:, None], curve.derivatives, 0.0)
    centred = np.where(ok[:, None], xl_all[mask] - E, 0.0)
    terms = np.zeros((data.n, d * (B.shape[0] - d)))
    terms[mask] = _kron_rows(resid[:, None] * deriv, centred)
    failed = np.zeros(data.n, dtype=bool)
    failed[mask] = ~ok
    return terms, failed


def propensity_terms(A, data: Dataset, bandwidth: Bandwidth, family: KernelFamily,
                     n_threads=1, nw_bandwidth=None):
    """Per-observation propensity estimating functions.

    Row ``i`` is ``kron(eta'(z_i), (x_Li - E[X_L | z_i]) (t_i - p_i))``.
    ``bad`` flags failed local logistic fits and probabilities outside (0, 1).
    ``nw_bandwidth`` (default ``bandwidth``) is used for ``E[X_L | z]``.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[1]
    z = data.X @ A
    _check_spread(z)
    sample = _Sample(z)
    curve = _local_logistic(sample, data.t, sample.z, family, bandwidth, n_threads)
    xl = data.X[:, d:]
    E, ok_e = nw_smooth(xl, sample, sample.z, family, nw_bandwidth or bandwidth, n_threads)
    with np.errstate(invalid="ignore"):
        p = expit(curve.values)
        ok = (curve.status == Status.OK) & ok_e & (p > 0) & (p < 1)
    resid = np.where(ok, data.t - p, 0.0)
    deriv = np.where(ok[:, None], curve.derivatives, 0.0)
    centred = np.where(ok[:, None], xl - E, 0.0)
    terms = _kron_rows(deriv, resid[:, None] * centred)
    return terms, ~ok


def outcome_moments(B, data, arm, bandwidth, family, n_threads=1):
    """Sample mean of :func:`outcome_terms` (used for numerical Jacobians)."""
    terms, _ = outcome_terms(B, data, arm, bandwidth, family, n_threads)
    return terms.sum(axis=0) / data.n


def propensity_moments(A, data, bandwidth, family, n_threads=1, nw_bandwidth=None):
    terms, _ = propensity_terms(A, data, bandwidth, family, n_threads, nw_bandwidth)
    return terms.sum(axis=0) / data.n


def outcome_objective(theta, data: Dataset, arm: int, config: ObjectiveConfig) -> float:
    """Squared norm of the summed outcome estimating functions plus penalty."""
    B = config.template.with_free(theta).matrix
    try:
        terms, failed = outcome_terms(B, data, arm, config.bandwidth, config.family,
                                      config.n_threads)
    except DegenerateProjection:
        return config.penalty.sentinel(int(np.count_nonzero(data.t == arm)))
    g = terms.sum(axis=0)
    return float(g @ g) + config.penalty(int(failed.sum()))


def propensity_objective(theta, data: Dataset, config: ObjectiveConfig) -> float:
    """Squared norm of the summed propensity estimating functions plus penalty."""
    A = config.template.with_free(theta).matrix
    try:
        terms, bad = propensity_terms(A, data, config.bandwidth, config.family,
                                      config.n_threads)
    except DegenerateProjection:
        return config.penalty.sentinel(data.n)
    g = terms.sum(axis=0)
    return float(g @ g) + config.penalty(int(bad.sum()))


@dataclass
class FitResult:
    """Outcome of a two-phase projection fit.

    ``curve`` is the final-phase smoother output at every sample point
    (after boundary repair and, for outcomes, truncation).  For propensity
    fits ``propensity`` holds the clipped probabilities.
    """

    kind: str
    projection: ProjectionMatrix
    objective_value: float
    curve: SmoothedCurve
    bandwidth_dim_red: Bandwidth
    bandwidth_final: Bandwidth
    optimizer: optimizers.OptimizerResult
    n_failed_final: int
    arm: Optional[int] = None
    propensity: Optional[np.ndarray] = None

    @property
    def converged(self) -> bool:
        return self.optimizer.converged

    def diagnostics(self) -> dict:
        return {
            "converged": bool(self.optimizer.converged),
            "n_iter": int(self.optimizer.n_iter),
            "n_eval": int(self.optimizer.n_eval),
            "objective_value": float(self.objective_value),
            "n_failed_final": int(self.n_failed_final),
            "status_counts": self.curve.counts(),
        }


def fit_projection(initial: ProjectionMatrix, objective: Callable[[np.ndarray], float],
                   optimizer="nelder-mead", sentinel=None, **options):
    """Minimise ``objective`` over the free block of ``initial``.

    Returns
    -------
    projection : ProjectionMatrix
        Same fixed block as ``initial``.
    result : OptimizerResult

    Raises
    ------
    DegenerateFit
        If the best value found is the degenerate-projection sentinel.
    """
    theta0 = vecl_pack(initial)
    res = optimizers.minimize(objective, theta0, optimizer, **options)
    if sentinel is not None and res.fun >= sentinel:
        raise DegenerateFit("objective is at the degenerate-projection sentinel")
    return initial.with_free(res.x), res


def _final_bandwidth(dim_red, scale, explicit, recalc, z, exponent):
    if explicit:
        return resolve_bandwidth(scale, "explicit", z, exponent)
    if recalc:
        return resolve_bandwidth(scale, "scaled", z, exponent)
    return dim_red


def final_outcome_curve(B, data: Dataset, arm: int, bandwidth: Bandwidth, family: KernelFamily,
                        to_extrapolate=True, extrapolation_basis=5, to_truncate=True,
                        n_threads=1) -> SmoothedCurve:
    """Arm-``arm`` local linear curve at all n points, repaired and truncated."""
    z = data.X @ np.asarray(B, dtype=float)
    mask = data.t == arm
    zs = z[mask]
    curve = _local_linear(_Sample(zs), np.ascontiguousarray(data.y[mask]),
                          np.ascontiguousarray(z), family, bandwidth, n_threads)
    if to_extrapolate:
        curve = boundary_extrapolate(curve, extrapolation_basis)
    if to_truncate:
        curve = truncate_fit(curve, data.y[mask])
    return curve


def final_propensity_curve(A, data: Dataset, bandwidth: Bandwidth, family: KernelFamily,
                           extrapolation_basis=5, n_threads=1):
    """Local logistic curve at all points with failed points repaired.

    Returns the repaired eta curve and the probabilities clipped to
    ``[1e-6, 1 - 1e-6]``.
    """
    z = np.ascontiguousarray(data.X @ np.asarray(A, dtype=float))
    sample = _Sample(z)
    curve = _local_logistic(sample, data.t, sample.z, family, bandwidth, n_threads)
    curve = boundary_extrapolate(curve, extrapolation_basis)
    p = np.clip(expit(curve.values), PROPENSITY_CLIP, 1 - PROPENSITY_CLIP)
    return curve, p


def _initial_projection(initial, p):
    if isinstance(initial, ProjectionMatrix):
        M = initial.matrix
    else:
        M = initial
    return ProjectionMatrix.from_matrix(check_projection_shape(M, p))


def fit_outcome(data: Dataset, arm: int, initial, *, bwc_dim_red=1.0, bwc_impute=1.25,
                explicit_bandwidth=False, recalc_bandwidth=False, family=None,
                penalty=None, optimizer="nelder-mead", optimizer_options=None,
                to_extrapolate=True, extrapolation_basis=5, to_truncate=True,
                bandwidth_exponent=DEFAULT_EXPONENT, n_threads=1) -> FitResult:
    """Two-phase fit of the outcome model for one treatment arm.

    Phase one resolves the dimension-reduction bandwidth at the initial
    projection and minimises :func:`outcome_objective`.  Phase two picks the
    final bandwidth (explicit value, or recalculated at the fitted
    projection when ``recalc_bandwidth``; otherwise the phase-one value) and
    refits the smoother once at every sample point.
    """
    family = family or KernelFamily()
    penalty = penalty or PenaltyConfig(10.0, 5)
    P0 = _initial_projection(initial, data.p)
    mode = "explicit" if explicit_bandwidth else "scaled"
    if np.count_nonzero(data.t == arm) < P0.d + 1:
        raise EstimatorInputError(f"arm {arm} has too few observations")
    if np.ptp(data.y[data.t == arm]) == 0:
        # every projection solves the estimating equation; nothing to identify
        raise EstimatorInputError(f"outcome has zero variance in arm {arm}")
    bw_dr = resolve_bandwidth(bwc_dim_red, mode, data.X @ P0.matrix, bandwidth_exponent)
    cfg = ObjectiveConfig(P0, bw_dr, family, penalty, n_threads)
    n_arm = int(np.count_nonzero(data.t == arm))
    P_hat, res = fit_projection(
        P0, lambda th: outcome_objective(th, data, arm, cfg), optimizer,
        sentinel=penalty.sentinel(n_arm), **(optimizer_options or {}))
    logger.info("outcome arm %d: objective %.6g after %d iterations (converged=%s)",
                arm, res.fun, res.n_iter, res.converged)
    B = P_hat.matrix
    bw_final = _final_bandwidth(bw_dr, bwc_impute, explicit_bandwidth, recalc_bandwidth,
                                data.X @ B, bandwidth_exponent)
    z = data.X @ B
    raw = _local_linear(_Sample(z[data.t == arm]), np.ascontiguousarray(data.y[data.t == arm]),
                        np.ascontiguousarray(z), family, bw_final, n_threads)
    curve = final_outcome_curve(B, data, arm, bw_final, family, to_extrapolate,
                                extrapolation_basis, to_truncate, n_threads)
    return FitResult("outcome", P_hat, res.fun, curve, bw_dr, bw_final, res,
                     raw.n_failed, arm=arm)


def fit_propensity(data: Dataset, initial, *, bwc_dim_red=1.0, bwc_prop_score=10.0,
                   explicit_bandwidth=False, recalc_bandwidth=True, family=None,
                   penalty=None, optimizer="nelder-mead", optimizer_options=None,
                   extrapolation_basis=5, bandwidth_exponent=DEFAULT_EXPONENT,
                   n_threads=1) -> FitResult:
    """Two-phase fit of the single-index propensity model."""
    family = family or KernelFamily()
    penalty = penalty or PenaltyConfig(10.0, 1)
    P0 = _initial_projection(initial, data.p)
    mode = "explicit" if explicit_bandwidth else "scaled"
    bw_dr = resolve_bandwidth(bwc_dim_red, mode, data.X @ P0.matrix, bandwidth_exponent)
    cfg = ObjectiveConfig(P0, bw_dr, family, penalty, n_threads)
    P_hat, res = fit_projection(
        P0, lambda th: propensity_objective(th, data, cfg), optimizer,
        sentinel=penalty.sentinel(data.n), **(optimizer_options or {}))
    logger.info("propensity: objective %.6g after %d iterations (converged=%s)",
                res.fun, res.n_iter, res.converged)
    A = P_hat.matrix
    bw_final = _final_bandwidth(bw_dr, bwc_prop_score, explicit_bandwidth, recalc_bandwidth,
                                data.X @ A, bandwidth_exponent)
    curve, p = final_propensity_curve(A, data, bw_final, family, extrapolation_basis, n_threads)
    n_failed = int(np.count_nonzero(curve.status != Status.OK))
    return FitResult("propensity", P_hat, res.fun, curve, bw_dr, bw_final, res,
                     n_failed, propensity=p)
