"""Kernel smoothers on projected covariates.

Nadaraya-Watson conditional means, local linear outcome curves, local
logistic propensity curves, and the boundary safeguards applied to them
(linear interpolation/extrapolation of failed points and truncation to the
observed outcome range).

Per-query work is split into fixed-size blocks; with ``n_threads > 1`` the
blocks run on a thread pool.  Block boundaries do not depend on the thread
count, so results are bit-identical for any ``n_threads``.
"""

from __future__ import annotations

import enum
import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from . import _core
from .exceptions import EmptyWindow, UnrecoverableFit
from .kernels import Bandwidth, KernelFamily

BLOCK = 128


class Status(enum.IntEnum):
    OK = 0
    INTERPOLATED = 1
    EXTRAPOLATED = 2
    FAILED = 3


@dataclass
class SmoothedCurve:
    """Smoother output at a set of evaluation points.

    Attributes
    ----------
    eval_points : ndarray of shape (m, d)
    values : ndarray of shape (m,)
        Fitted function values (``m_hat`` or ``eta_hat``).
    derivatives : ndarray of shape (m, d)
    status : ndarray of shape (m,), dtype int8
        One of :class:`Status` per point.
    """

    eval_points: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    status: np.ndarray

    def __post_init__(self):
        self.eval_points = _as_2d(self.eval_points)
        self.values = np.asarray(self.values, dtype=float)
        self.derivatives = _as_2d(self.derivatives)
        self.status = np.asarray(self.status, dtype=np.int8)

    @property
    def failed(self) -> np.ndarray:
        return self.status == Status.FAILED

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(self.status == Status.FAILED))

    def counts(self) -> dict:
        return {s.name.lower(): int(np.count_nonzero(self.status == s)) for s in Status}

    def propensity(self) -> np.ndarray:
        """``expit(values)``; meaningful for local-logistic curves."""
        return expit(self.values)

    def copy(self) -> "SmoothedCurve":
        return SmoothedCurve(self.eval_points.copy(), self.values.copy(),
                             self.derivatives.copy(), self.status.copy())


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


@functools.lru_cache(maxsize=8)
def _pool(n_threads):
    return ThreadPoolExecutor(max_workers=n_threads, thread_name_prefix="sdrate")


def _dispatch(fn, m, n_threads, args):
    blocks = [(s, min(s + BLOCK, m)) for s in range(0, m, BLOCK)]
    if n_threads is None or n_threads <= 1 or len(blocks) <= 1:
        for s, e in blocks:
            fn(*args, s, e)
        return
    futures = [_pool(int(n_threads)).submit(fn, *args, s, e) for s, e in blocks]
    for f in futures:
        f.result()


class _Sample:
    """Projected sample sorted along its first coordinate."""

    def __init__(self, projected):
        self.z = np.ascontiguousarray(_as_2d(projected))
        self.order = np.argsort(self.z[:, 0], kind="stable")
        self.keys = np.ascontiguousarray(self.z[self.order, 0])

    @property
    def d(self):
        return self.z.shape[1]


def _prep(family, bandwidth, d):
    if not isinstance(bandwidth, Bandwidth):
        raise TypeError("bandwidth must be a Bandwidth")
    h = np.ascontiguousarray(bandwidth.values(d), dtype=float)
    return h, family.code, float(family.gauss_cutoff), family.radius


def nw_smooth(targets, projected, queries, family: KernelFamily, bandwidth: Bandwidth,
              n_threads=1):
    """Nadaraya-Watson means of ``targets`` at many queries.

    Returns
    -------
    values : ndarray of shape (m, q)
        NaN rows where the window is empty.
    ok : ndarray of bool, shape (m,)
    """
    sample = projected if isinstance(projected, _Sample) else _Sample(projected)
    tg = np.ascontiguousarray(_as_2d(targets))
    qs = np.ascontiguousarray(_as_2d(queries))
    h, code, cutoff, radius = _prep(family, bandwidth, sample.d)
    m = qs.shape[0]
    out = np.empty((m, tg.shape[1]))
    ok = np.empty(m, dtype=np.bool_)
    _dispatch(_core.nw_block, m, n_threads,
              (sample.z, tg, sample.order, sample.keys, qs, h, code, cutoff, radius, out, ok))
    return out, ok


def nw_conditional_mean(targets, projected, query, family: KernelFamily,
                        bandwidth: Bandwidth):
    """Kernel-weighted mean of ``targets`` at a single ``query`` point.

    Raises
    ------
    EmptyWindow
        When no sample point gets positive weight.
    """
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    q = np.atleast_1d(np.asarray(query, dtype=float))[None, :]
    vals, ok = nw_smooth(targets, projected, q, family, bandwidth)
    if not ok[0]:
        raise EmptyWindow(f"no sample point within the kernel window at {q[0]}")
    return vals[0, 0] if squeeze else vals[0]


def local_linear_fit(y, t_mask, projected, queries, family: KernelFamily,
                     bandwidth: Bandwidth, n_threads=1) -> SmoothedCurve:
    """Local linear fit on the masked subsample, evaluated at ``queries``.

    The value is the local intercept and the derivative the local slope of
    a kernel-weighted least-squares line.  Queries with an empty window or a
    singular local design are marked ``FAILED``.
    """
    y = np.asarray(y, dtype=float)
    mask = np.ones(y.shape[0], dtype=bool) if t_mask is None else np.asarray(t_mask, dtype=bool)
    z = _as_2d(projected)
    sample = _Sample(z[mask])
    ys = np.ascontiguousarray(y[mask])
    qs = np.ascontiguousarray(_as_2d(queries))
    return _local_linear(sample, ys, qs, family, bandwidth, n_threads)


def _local_linear(sample, ys, qs, family, bandwidth, n_threads):
    h, code, cutoff, radius = _prep(family, bandwidth, sample.d)
    m = qs.shape[0]
    val = np.empty(m)
    der = np.empty((m, sample.d))
    ok = np.empty(m, dtype=np.bool_)
    if sample.z.shape[0] == 0:
        val[:] = np.nan
        der[:] = np.nan
        ok[:] = False
    else:
        _dispatch(_core.local_linear_block, m, n_threads,
                  (sample.z, ys, sample.order, sample.keys, qs, h, code, cutoff, radius,
                   val, der, ok))
    status = np.where(ok, Status.OK, Status.FAILED).astype(np.int8)
    return SmoothedCurve(qs, val, der, status)


def local_logistic_fit(t, projected, queries, family: KernelFamily, bandwidth: Bandwidth,
                       n_threads=1) -> SmoothedCurve:
    """Local logistic fit of a binary treatment on the projection.

    At each query ``z`` the kernel-weighted logistic likelihood with linear
    predictor ``eta + eta' (z_i - z)`` is maximised by damped Newton
    iteration.  ``values`` holds ``eta_hat`` and ``derivatives`` ``eta_hat'``.
    Windows with a single treatment class, saturated or non-converged fits
    are ``FAILED``.
    """
    sample = _Sample(projected)
    tt = np.ascontiguousarray(np.asarray(t, dtype=float))
    qs = np.ascontiguousarray(_as_2d(queries))
    return _local_logistic(sample, tt, qs, family, bandwidth, n_threads)


def _local_logistic(sample, tt, qs, family, bandwidth, n_threads):
    h, code, cutoff, radius = _prep(family, bandwidth, sample.d)
    m = qs.shape[0]
    val = np.empty(m)
    der = np.empty((m, sample.d))
    ok = np.empty(m, dtype=np.bool_)
    iters = np.empty(m, dtype=np.int64)
    _dispatch(_core.local_logistic_block, m, n_threads,
              (sample.z, tt, sample.order, sample.keys, qs, h, code, cutoff, radius,
               val, der, ok, iters))
    status = np.where(ok, Status.OK, Status.FAILED).astype(np.int8)
    return SmoothedCurve(qs, val, der, status)


def _mean_pair_slope(z, v):
    dz = np.diff(z)
    good = dz != 0
    if not np.any(good):
        return 0.0
    return float(np.mean(np.diff(v)[good] / dz[good]))


def boundary_extrapolate(curve: SmoothedCurve, basis_count: int = 5) -> SmoothedCurve:
    """Repair failed points of a one-dimensional curve.

    Failed points beyond the range of the successful ones are extrapolated
    linearly from the ``basis_count`` nearest successful points, using the
    mean slope over consecutive pairs of those points.  Failed points inside
    the range are linearly interpolated between their nearest successful
    neighbours.

    Raises
    ------
    UnrecoverableFit
        Fewer than two successful points, or a failure on a 2-d curve.
    """
    if basis_count < 2:
        raise ValueError("basis_count must be >= 2")
    out = curve.copy()
    bad = np.flatnonzero(out.status == Status.FAILED)
    if bad.size == 0:
        return out
    if out.eval_points.shape[1] != 1:
        raise UnrecoverableFit("extrapolation is only defined for one-dimensional projections")
    good = np.flatnonzero(out.status != Status.FAILED)
    if good.size < 2:
        raise UnrecoverableFit(f"only {good.size} successful smoother points")
    zg_all = out.eval_points[good, 0]
    srt = np.argsort(zg_all, kind="stable")
    zg = zg_all[srt]
    vg = out.values[good][srt]
    dg = out.derivatives[good, 0][srt]
    k = min(basis_count, zg.size)
    lo_slope = _mean_pair_slope(zg[:k], vg[:k])
    hi_slope = _mean_pair_slope(zg[-k:], vg[-k:])
    for i in bad:
        zf = out.eval_points[i, 0]
        if zf < zg[0]:
            out.values[i] = vg[0] + lo_slope * (zf - zg[0])
            out.derivatives[i, 0] = lo_slope
            out.status[i] = Status.EXTRAPOLATED
        elif zf > zg[-1]:
            out.values[i] = vg[-1] + hi_slope * (zf - zg[-1])
            out.derivatives[i, 0] = hi_slope
            out.status[i] = Status.EXTRAPOLATED
        else:
            r = int(np.searchsorted(zg, zf, side="left"))
            l = int(np.searchsorted(zg, zf, side="right")) - 1
            if zg[r] == zf or zg[l] == zf:
                # a successful point sits exactly here
                hit = zg == zf
                out.values[i] = vg[hit].mean()
                out.derivatives[i, 0] = dg[hit].mean()
            else:
                slope = (vg[r] - vg[l]) / (zg[r] - zg[l])
                out.values[i] = vg[l] + slope * (zf - zg[l])
                out.derivatives[i, 0] = slope
            out.status[i] = Status.INTERPOLATED
    return out


def truncate_fit(curve: SmoothedCurve, y_observed) -> SmoothedCurve:
    """Clamp curve values to ``[min(y_observed), max(y_observed)]``."""
    y_observed = np.asarray(y_observed, dtype=float)
    if y_observed.size == 0:
        raise ValueError("y_observed must be non-empty")
    return replace(curve.copy(), values=np.clip(curve.values, y_observed.min(), y_observed.max()))
