import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from sdrate.optimizers import cobyla, minimize, nelder_mead, simulated_annealing


def quadratic(x):
    return float(np.sum((x - np.array([1.0, -2.0, 0.5])) ** 2))


def rosenbrock(x):
    return float(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)


@pytest.mark.parametrize("method", ["nelder-mead", "cobyla"])
def test_quadratic_minimum(method):
    res = minimize(quadratic, np.zeros(3), method, max_iter=2000)
    assert_allclose(res.x, [1.0, -2.0, 0.5], atol=1e-3)
    assert res.converged


def test_nelder_mead_rosenbrock():
    res = nelder_mead(rosenbrock, np.array([-1.2, 1.0]), max_iter=5000, reltol=1e-14)
    assert_allclose(res.x, [1.0, 1.0], atol=1e-4)


def test_nelder_mead_zero_iterations():
    x0 = np.array([0.3, 0.4])
    res = nelder_mead(rosenbrock, x0, max_iter=0)
    assert np.array_equal(res.x, x0)
    assert not res.converged
    assert res.n_iter == 0


def test_nelder_mead_budget_not_converged():
    res = nelder_mead(rosenbrock, np.array([-1.2, 1.0]), max_iter=3)
    assert not res.converged
    assert res.n_iter == 3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=4))
def test_nelder_mead_trace_monotone(x0):
    res = nelder_mead(lambda x: float(np.sum(np.abs(x) ** 1.5) + np.sin(x[0])),
                      np.array(x0), max_iter=60)
    assert all(a >= b for a, b in zip(res.trace, res.trace[1:]))
    assert res.fun <= float(np.sum(np.abs(x0) ** 1.5) + np.sin(x0[0]))


def test_annealing_is_seeded_and_improves():
    a = simulated_annealing(quadratic, np.zeros(3), max_iter=500, seed=3)
    b = simulated_annealing(quadratic, np.zeros(3), max_iter=500, seed=3)
    assert np.array_equal(a.x, b.x)
    assert a.fun < quadratic(np.zeros(3))
    assert all(x >= y for x, y in zip(a.trace, a.trace[1:]))


def test_cobyla_zero_iterations():
    res = cobyla(quadratic, np.ones(3), max_iter=0)
    assert np.array_equal(res.x, np.ones(3))
    assert not res.converged


def test_unknown_method():
    with pytest.raises(ValueError):
        minimize(quadratic, np.zeros(3), "bfgs")
