"""Compiled inner loops for the kernel smoothers.

All routines take the sample sorted along the first projected coordinate
(``order``/``keys``) and visit only the points whose first coordinate lies
inside the kernel support around each query.  Summation runs in sorted order,
one query at a time, so a query's result does not depend on how queries are
split into blocks.
"""

import math

import numpy as np
from numba import njit

EPAN = 0
QUARTIC = 1
GAUSSIAN = 2

INV_SQRT_2PI = 0.3989422804014327

# relative singularity threshold for the local design covariance
SING_TOL = 1e-10

# local-logistic Newton controls
NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 20
NEWTON_TOL = 1e-9
ETA_LIMIT = 35.0
LL_SLACK = 1e-13


@njit(cache=True, nogil=True)
def kernel_value(code, u, cutoff):
    if code == EPAN:
        if u * u >= 1.0:
            return 0.0
        return 0.75 * (1.0 - u * u)
    elif code == QUARTIC:
        if u * u >= 1.0:
            return 0.0
        v = 1.0 - u * u
        return 0.9375 * v * v
    else:
        v = INV_SQRT_2PI * math.exp(-0.5 * u * u)
        if v < cutoff:
            return 0.0
        return v


@njit(cache=True, nogil=True)
def kernel_array(code, u, cutoff):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        out[i] = kernel_value(code, u[i], cutoff)
    return out


@njit(cache=True, nogil=True)
def _weight(code, z, i, q, h, cutoff):
    w = 1.0
    for j in range(z.shape[1]):
        w *= kernel_value(code, (z[i, j] - q[j]) / h[j], cutoff) / h[j]
        if w == 0.0:
            return 0.0
    return w


@njit(cache=True, nogil=True)
def _window(keys, q0, reach):
    lo = np.searchsorted(keys, q0 - reach)
    hi = np.searchsorted(keys, q0 + reach, side="right")
    return lo, hi


@njit(cache=True, nogil=True)
def nw_block(z, targets, order, keys, queries, h, code, cutoff, radius,
             out, ok, start, stop):
    """Nadaraya-Watson means of ``targets`` at ``queries[start:stop]``.

    The weighted mean is accumulated as a shift from the first in-window
    target, which makes constant targets reproduce exactly.
    """
    nq = targets.shape[1]
    acc = np.empty(nq)
    shift = np.empty(nq)
    for m in range(start, stop):
        q = queries[m]
        lo, hi = _window(keys, q[0], radius * h[0])
        sw = 0.0
        first = True
        for c in range(nq):
            acc[c] = 0.0
        for k in range(lo, hi):
            i = order[k]
            w = _weight(code, z, i, q, h, cutoff)
            if w > 0.0:
                if first:
                    for c in range(nq):
                        shift[c] = targets[i, c]
                    first = False
                sw += w
                for c in range(nq):
                    acc[c] += w * (targets[i, c] - shift[c])
        if sw > 0.0:
            ok[m] = True
            for c in range(nq):
                out[m, c] = shift[c] + acc[c] / sw
        else:
            ok[m] = False
            for c in range(nq):
                out[m, c] = np.nan


@njit(cache=True, nogil=True)
def _solve_small(a, b):
    """Gaussian elimination with partial pivoting for tiny dense systems.

    Returns ``(x, singular)``; ``a`` and ``b`` are overwritten.
    """
    n = b.shape[0]
    for col in range(n):
        piv = col
        big = abs(a[col, col])
        for r in range(col + 1, n):
            if abs(a[r, col]) > big:
                big = abs(a[r, col])
                piv = r
        if big == 0.0:
            return b, True
        if piv != col:
            for c in range(n):
                tmp = a[col, c]
                a[col, c] = a[piv, c]
                a[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        for r in range(col + 1, n):
            f = a[r, col] / a[col, col]
            for c in range(col, n):
                a[r, c] -= f * a[col, c]
            b[r] -= f * b[col]
    x = np.empty(n)
    for r in range(n - 1, -1, -1):
        s = b[r]
        for c in range(r + 1, n):
            s -= a[r, c] * x[c]
        x[r] = s / a[r, r]
    return x, False


@njit(cache=True, nogil=True)
def _design_singular(sxx, h):
    d = h.shape[0]
    if d == 1:
        return sxx[0, 0] <= SING_TOL * h[0] * h[0]
    det = sxx[0, 0] * sxx[1, 1] - sxx[0, 1] * sxx[1, 0]
    scale = h[0] * h[0] * h[1] * h[1]
    return (sxx[0, 0] <= SING_TOL * h[0] * h[0]
            or sxx[1, 1] <= SING_TOL * h[1] * h[1]
            or det <= SING_TOL * scale)


@njit(cache=True, nogil=True)
def local_linear_block(z, y, order, keys, queries, h, code, cutoff, radius,
                       out_val, out_der, ok, start, stop):
    """Weighted least-squares line at each query (two-pass, centred)."""
    d = z.shape[1]
    zb = np.empty(d)
    sxy = np.empty(d)
    sxx = np.empty((d, d))
    for m in range(start, stop):
        q = queries[m]
        lo, hi = _window(keys, q[0], radius * h[0])
        sw = 0.0
        yb = 0.0
        y0 = 0.0
        first = True
        for j in range(d):
            zb[j] = 0.0
        for k in range(lo, hi):
            i = order[k]
            w = _weight(code, z, i, q, h, cutoff)
            if w > 0.0:
                if first:
                    y0 = y[i]
                    first = False
                sw += w
                yb += w * (y[i] - y0)
                for j in range(d):
                    zb[j] += w * (z[i, j] - q[j])
        if sw == 0.0:
            ok[m] = False
            out_val[m] = np.nan
            for j in range(d):
                out_der[m, j] = np.nan
            continue
        yb /= sw
        for j in range(d):
            zb[j] /= sw
            sxy[j] = 0.0
            for l in range(d):
                sxx[j, l] = 0.0
        for k in range(lo, hi):
            i = order[k]
            w = _weight(code, z, i, q, h, cutoff)
            if w > 0.0:
                r = (y[i] - y0) - yb
                for j in range(d):
                    dj = z[i, j] - q[j] - zb[j]
                    sxy[j] += w * dj * r
                    for l in range(d):
                        sxx[j, l] += w * dj * (z[i, l] - q[l] - zb[l])
        for j in range(d):
            sxy[j] /= sw
            for l in range(d):
                sxx[j, l] /= sw
        if _design_singular(sxx, h):
            ok[m] = False
            out_val[m] = np.nan
            for j in range(d):
                out_der[m, j] = np.nan
            continue
        if d == 1:
            b0 = sxy[0] / sxx[0, 0]
            out_der[m, 0] = b0
            out_val[m] = y0 + yb - b0 * zb[0]
        else:
            det = sxx[0, 0] * sxx[1, 1] - sxx[0, 1] * sxx[1, 0]
            b0 = (sxx[1, 1] * sxy[0] - sxx[0, 1] * sxy[1]) / det
            b1 = (sxx[0, 0] * sxy[1] - sxx[1, 0] * sxy[0]) / det
            out_der[m, 0] = b0
            out_der[m, 1] = b1
            out_val[m] = y0 + yb - b0 * zb[0] - b1 * zb[1]
        ok[m] = True


@njit(cache=True, nogil=True)
def _log1pexp(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True, nogil=True)
def _expit(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _logistic_state(beta, wbuf, dzbuf, tbuf, cnt, npar, score, hess):
    """Normalised log-likelihood, score and (negative) Hessian."""
    ll = 0.0
    for a in range(npar):
        score[a] = 0.0
        for b in range(npar):
            hess[a, b] = 0.0
    sw = 0.0
    for k in range(cnt):
        w = wbuf[k]
        eta = beta[0]
        for j in range(npar - 1):
            eta += beta[j + 1] * dzbuf[k, j]
        p = _expit(eta)
        ll += w * (tbuf[k] * eta - _log1pexp(eta))
        r = w * (tbuf[k] - p)
        v = w * p * (1.0 - p)
        score[0] += r
        hess[0, 0] += v
        for j in range(npar - 1):
            score[j + 1] += r * dzbuf[k, j]
            hess[0, j + 1] += v * dzbuf[k, j]
            for l in range(npar - 1):
                hess[j + 1, l + 1] += v * dzbuf[k, j] * dzbuf[k, l]
        sw += w
    for a in range(npar):
        score[a] /= sw
        for b in range(a, npar):
            hess[a, b] /= sw
            hess[b, a] = hess[a, b]
    return ll / sw


@njit(cache=True, nogil=True)
def local_logistic_block(z, t, order, keys, queries, h, code, cutoff, radius,
                         out_val, out_der, ok, iters, start, stop):
    """Kernel-weighted local logistic fit (intercept + slope) per query.

    Damped Newton: full step, halved until the weighted log-likelihood does
    not decrease.  A window holding one treatment class, a non-converged
    solve, or a saturated intercept is reported as not ok.  When the window
    has no spread along the projection the slope is unidentified and an
    intercept-only fit with zero slope is returned.
    """
    n = z.shape[0]
    d = z.shape[1]
    wbuf = np.empty(n)
    tbuf = np.empty(n)
    dzbuf = np.empty((n, d))
    beta = np.empty(d + 1)
    trial = np.empty(d + 1)
    score = np.empty(d + 1)
    hess = np.empty((d + 1, d + 1))
    zb = np.empty(d)
    sxx = np.empty((d, d))
    for m in range(start, stop):
        q = queries[m]
        lo, hi = _window(keys, q[0], radius * h[0])
        cnt = 0
        sw = 0.0
        st = 0.0
        for j in range(d):
            zb[j] = 0.0
        for k in range(lo, hi):
            i = order[k]
            w = _weight(code, z, i, q, h, cutoff)
            if w > 0.0:
                wbuf[cnt] = w
                tbuf[cnt] = t[i]
                for j in range(d):
                    dzbuf[cnt, j] = z[i, j] - q[j]
                    zb[j] += w * dzbuf[cnt, j]
                sw += w
                st += w * t[i]
                cnt += 1
        iters[m] = 0
        for j in range(d):
            out_der[m, j] = np.nan
        out_val[m] = np.nan
        ok[m] = False
        if cnt == 0:
            continue
        has1 = False
        has0 = False
        for k in range(cnt):
            if tbuf[k] > 0.5:
                has1 = True
            else:
                has0 = True
        if not (has1 and has0):
            continue
        for j in range(d):
            zb[j] /= sw
            for l in range(d):
                sxx[j, l] = 0.0
        for k in range(cnt):
            for j in range(d):
                for l in range(d):
                    sxx[j, l] += wbuf[k] * (dzbuf[k, j] - zb[j]) * (dzbuf[k, l] - zb[l])
        for j in range(d):
            for l in range(d):
                sxx[j, l] /= sw
        npar = d + 1
        if _design_singular(sxx, h):
            npar = 1
        pbar = st / sw
        beta[0] = math.log(pbar / (1.0 - pbar))
        for j in range(d):
            beta[j + 1] = 0.0
        ll = _logistic_state(beta, wbuf, dzbuf, tbuf, cnt, npar, score, hess)
        converged = False
        it = 0
        while it < NEWTON_MAX_ITER:
            it += 1
            smax = 0.0
            for a in range(npar):
                if abs(score[a]) > smax:
                    smax = abs(score[a])
            hcopy = hess[:npar, :npar].copy()
            rhs = score[:npar].copy()
            step, singular = _solve_small(hcopy, rhs)
            if singular:
                break
            if smax < NEWTON_TOL:
                # one polishing step past the tolerance
                for a in range(npar):
                    beta[a] += step[a]
                converged = True
                break
            frac = 1.0
            accepted = False
            for _ in range(NEWTON_MAX_HALVINGS + 1):
                for a in range(npar):
                    trial[a] = beta[a] + frac * step[a]
                for a in range(npar, d + 1):
                    trial[a] = 0.0
                ll_new = _logistic_state(trial, wbuf, dzbuf, tbuf, cnt, npar,
                                         score, hess)
                # slack for roundoff once changes reach machine precision
                if ll_new >= ll - LL_SLACK * (1.0 + abs(ll)):
                    accepted = True
                    break
                frac *= 0.5
            if not accepted:
                break
            for a in range(d + 1):
                beta[a] = trial[a]
            ll = ll_new
            if abs(beta[0]) > ETA_LIMIT:
                break
        iters[m] = it
        if not converged or abs(beta[0]) > ETA_LIMIT:
            continue
        ok[m] = True
        out_val[m] = beta[0]
        for j in range(d):
            out_der[m, j] = beta[j + 1] if npar > 1 else 0.0
