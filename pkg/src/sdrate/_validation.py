"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EstimatorInputError


@dataclass
class Dataset:
    """Observed sample: covariates ``X`` (n, p), outcomes ``y`` and binary ``t``."""

    X: np.ndarray
    y: np.ndarray
    t: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def check_covariates(X, min_rows=2) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise EstimatorInputError(f"covariates must be a 2-d array, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise EstimatorInputError(f"need at least {min_rows} observations, got {X.shape[0]}")
    if X.shape[1] < 2:
        raise EstimatorInputError("need at least two covariates")
    if not np.all(np.isfinite(X)):
        raise EstimatorInputError("covariates contain non-finite values")
    return np.ascontiguousarray(X)


def check_treatment(t, n, require_both=True) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 1 or t.shape[0] != n:
        raise EstimatorInputError(f"treatment must be a vector of length {n}")
    tf = t.astype(float)
    if not np.all((tf == 0) | (tf == 1)):
        raise EstimatorInputError("treatment must be binary (0/1)")
    if require_both and (tf.min() == tf.max()):
        raise EstimatorInputError("treatment has a single class; both treated and controls are required")
    return tf


def check_outcome(y, n) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != n:
        raise EstimatorInputError(f"outcome must be a vector of length {n}")
    if not np.all(np.isfinite(y)):
        raise EstimatorInputError("outcome contains non-finite values")
    return y


def check_dataset(X, y, t, require_both=True) -> Dataset:
    X = check_covariates(X)
    n = X.shape[0]
    return Dataset(X, check_outcome(y, n), check_treatment(t, n, require_both))


def check_projection_shape(B, p) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != p or B.shape[1] not in (1, 2) or p <= B.shape[1]:
        raise EstimatorInputError(
            f"projection must be a {p} x d matrix with d in (1, 2), got shape {B.shape}"
        )
    if not np.all(np.isfinite(B)):
        raise EstimatorInputError("projection contains non-finite values")
    return B


def check_finite(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise EstimatorInputError(f"{name} contains non-finite values")
    return a
