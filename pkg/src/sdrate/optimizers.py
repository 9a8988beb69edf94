"""Derivative-free minimisers used to fit projection matrices.

``nelder_mead`` and ``simulated_annealing`` are implemented here;
``cobyla`` delegates to :func:`scipy.optimize.minimize`.  All three return an
:class:`OptimizerResult` and never raise on non-convergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

METHODS = ("nelder-mead", "sann", "cobyla")


@dataclass
class OptimizerResult:
    x: np.ndarray
    fun: float
    n_iter: int
    n_eval: int
    converged: bool
    trace: list = field(default_factory=list)
    message: str = ""


def _initial_steps(x0):
    return np.maximum(0.1, 0.1 * np.abs(x0))


def nelder_mead(fun, x0, max_iter=500, reltol=1e-8, steps=None):
    """Nelder-Mead simplex search.

    Reflection 1, expansion 2, contraction 0.5, shrink 0.5.  The starting
    simplex is ``x0`` plus one vertex per coordinate offset by
    ``max(0.1, 0.1 |x0_i|)``.  Stops when the spread of function values over
    the simplex is at most ``reltol * (|f_best| + reltol)``.

    ``trace`` records the best value after every iteration and is therefore
    non-increasing.
    """
    x0 = np.asarray(x0, dtype=float)
    k = x0.size
    f0 = float(fun(x0))
    n_eval = 1
    if max_iter <= 0 or k == 0:
        return OptimizerResult(x0.copy(), f0, 0, n_eval, False, [f0], "no iterations")
    steps = _initial_steps(x0) if steps is None else np.broadcast_to(steps, x0.shape)
    simplex = np.empty((k + 1, k))
    fvals = np.empty(k + 1)
    simplex[0] = x0
    fvals[0] = f0
    for j in range(k):
        v = x0.copy()
        v[j] += steps[j]
        simplex[j + 1] = v
        fvals[j + 1] = fun(v)
        n_eval += 1

    trace = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        idx = np.argsort(fvals, kind="stable")
        simplex = simplex[idx]
        fvals = fvals[idx]
        if fvals[-1] - fvals[0] <= reltol * (abs(fvals[0]) + reltol):
            converged = True
            trace.append(float(fvals[0]))
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = fun(xr)
        n_eval += 1
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = fun(xe)
            n_eval += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (worst - centroid)
            fc = fun(xc)
            n_eval += 1
            if fc < min(fr, fvals[-1]):
                simplex[-1], fvals[-1] = xc, fc
            else:
                best = simplex[0].copy()
                for j in range(1, k + 1):
                    simplex[j] = best + 0.5 * (simplex[j] - best)
                    fvals[j] = fun(simplex[j])
                    n_eval += 1
        trace.append(float(np.min(fvals)))
    b = int(np.argmin(fvals))
    msg = "converged" if converged else "iteration limit reached"
    return OptimizerResult(simplex[b].copy(), float(fvals[b]), it, n_eval, converged, trace, msg)


def simulated_annealing(fun, x0, max_iter=2000, temp=10.0, cooling=0.95, tmax=10,
                        step=None, seed=0):
    """Metropolis simulated annealing with geometric cooling.

    The temperature is ``temp * cooling**(i // tmax)`` at iteration ``i``;
    Gaussian proposals are scaled by ``step * sqrt(T / temp)``.  Returns the
    best point visited.  ``converged`` is true when the iteration budget is
    used, mirroring the usual convention that annealing has no other stopping
    rule.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float).copy()
    fx = float(fun(x))
    best_x, best_f = x.copy(), fx
    trace = [best_f]
    scale = _initial_steps(x) if step is None else np.broadcast_to(step, x.shape)
    n_eval = 1
    for i in range(int(max_iter)):
        T = temp * cooling ** (i // tmax)
        cand = x + scale * np.sqrt(T / temp) * rng.standard_normal(x.size)
        fc = float(fun(cand))
        n_eval += 1
        delta = fc - fx
        if delta <= 0 or (np.isfinite(delta) and rng.random() < np.exp(-delta / T)):
            x, fx = cand, fc
            if fx < best_f:
                best_x, best_f = x.copy(), fx
        trace.append(best_f)
    done = max_iter > 0
    return OptimizerResult(best_x, best_f, int(max_iter), n_eval, done, trace,
                           "budget exhausted" if done else "no iterations")


def cobyla(fun, x0, max_iter=500, rhobeg=None, tol=1e-8):
    """Unconstrained COBYLA via SciPy."""
    x0 = np.asarray(x0, dtype=float)
    trace = []

    def wrapped(v):
        f = float(fun(v))
        trace.append(min(f, trace[-1]) if trace else f)
        return f

    if max_iter <= 0:
        f0 = wrapped(x0)
        return OptimizerResult(x0.copy(), f0, 0, 1, False, trace, "no iterations")
    if rhobeg is None:
        rhobeg = float(np.max(_initial_steps(x0)))
    res = optimize.minimize(wrapped, x0, method="COBYLA",
                            options={"maxiter": int(max_iter), "rhobeg": rhobeg, "tol": tol})
    return OptimizerResult(np.asarray(res.x, dtype=float), float(res.fun),
                           int(res.get("nfev", len(trace))), len(trace), bool(res.success),
                           trace, str(res.message))


def minimize(fun, x0, method="nelder-mead", **options):
    """Dispatch to one of :data:`METHODS`."""
    method = method.lower()
    if method in ("nelder-mead", "neldermead", "nm"):
        return nelder_mead(fun, x0, **options)
    if method in ("sann", "simulated-annealing", "simulatedannealing"):
        return simulated_annealing(fun, x0, **options)
    if method == "cobyla":
        return cobyla(fun, x0, **options)
    raise ValueError(f"unknown optimizer {method!r}; expected one of {METHODS}")
