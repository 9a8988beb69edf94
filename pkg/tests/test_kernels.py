import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from sdrate.exceptions import ConfigurationError, DegenerateProjection
from sdrate.kernels import Bandwidth, KernelFamily, kernel_eval, resolve_bandwidth

FAMILIES = ["EPAN", "QUARTIC", "GAUSSIAN"]


@pytest.mark.parametrize("variant", FAMILIES)
def test_kernel_symmetry_exact(variant):
    u = np.random.default_rng(0).normal(scale=2.0, size=10_000)
    k = KernelFamily(variant)
    assert np.array_equal(k(u), k(-u))


@pytest.mark.parametrize("variant", ["EPAN", "QUARTIC"])
def test_compact_kernel_mass(variant):
    k = KernelFamily(variant)
    mass, _ = integrate.quad(lambda u: float(k(u)), -1, 1, epsabs=1e-12)
    assert 0.999 <= mass <= 1.001


@pytest.mark.parametrize("cutoff", [1e-4, 1e-3, 1e-2])
def test_gaussian_truncated_mass(cutoff):
    k = KernelFamily("GAUSSIAN", gauss_cutoff=cutoff)
    r = k.radius
    mass, _ = integrate.quad(lambda u: float(k(u)), -r, r, epsabs=1e-12, points=[0.0])
    assert 0.99 <= mass <= 1.0
    # nothing outside the stated support
    assert k(np.array([r * 1.001, -r * 1.001])).max() == 0.0


@pytest.mark.parametrize("variant,u,expected", [
    ("EPAN", 0.0, 0.75),
    ("EPAN", 0.5, 0.5625),
    ("EPAN", 1.0, 0.0),
    ("QUARTIC", 0.0, 15 / 16),
    ("QUARTIC", 0.5, 15 / 16 * 0.5625),
    ("GAUSSIAN", 0.0, 1 / np.sqrt(2 * np.pi)),
    ("GAUSSIAN", 1.0, np.exp(-0.5) / np.sqrt(2 * np.pi)),
])
def test_kernel_values(variant, u, expected):
    assert_allclose(KernelFamily(variant)(u), expected, rtol=1e-14)


def test_gaussian_cutoff_zeroes_tail():
    k = KernelFamily("GAUSSIAN", gauss_cutoff=1e-3)
    assert k(4.0) == 0.0
    assert k(3.0) > 0.0


def test_kernel_aliases_and_unknown():
    assert KernelFamily("epanechnikov").variant == "EPAN"
    assert KernelFamily("biweight").variant == "QUARTIC"
    with pytest.raises(ConfigurationError):
        KernelFamily("triangle")
    with pytest.raises(ConfigurationError):
        KernelFamily("GAUSSIAN", gauss_cutoff=0.0)


def test_explicit_bandwidth_passthrough():
    bw = resolve_bandwidth(0.5, "explicit", np.arange(10.0))
    assert bw.resolved == (0.5,)


def test_scaled_bandwidth_positive_exponent():
    # unit sample sd and n = 1000 give 1000**(1/5)
    z = np.random.default_rng(1).normal(size=1000)
    z = (z - z.mean()) / z.std(ddof=1)
    bw = resolve_bandwidth(1.0, "scaled", z, exponent=0.2)
    assert_allclose(bw.resolved[0], 3.98107, atol=1e-5)


def test_scaled_bandwidth_default_exponent_shrinks():
    z = np.random.default_rng(1).normal(size=1000)
    z = (z - z.mean()) / z.std(ddof=1)
    bw = resolve_bandwidth(1.0, "scaled", z)
    assert_allclose(bw.resolved[0], 1000 ** -0.2, rtol=1e-12)


def test_scaled_bandwidth_two_columns():
    z = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    bw = resolve_bandwidth(2.0, "scaled", z)
    sd = np.std(np.arange(5.0), ddof=1)
    assert_allclose(bw.resolved, [2 * sd * 5 ** -0.2, 4 * sd * 5 ** -0.2])


@pytest.mark.parametrize("c", [0.1, 1.0, 7.0])
def test_scaled_bandwidth_constant_projection(c):
    with pytest.raises(DegenerateProjection):
        resolve_bandwidth(c, "scaled", np.full(20, 3.0))


def test_bandwidth_validation():
    with pytest.raises(ConfigurationError):
        Bandwidth("adaptive", 1.0)
    with pytest.raises(ConfigurationError):
        Bandwidth("explicit", 0.0)
    with pytest.raises(ConfigurationError):
        Bandwidth("explicit", 1.0).values()


def test_kernel_eval_product():
    fam = KernelFamily("EPAN")
    bw = Bandwidth("explicit", 1.0, (2.0, 0.5))
    expected = (0.75 * (1 - 0.25) / 2.0) * (0.75 * (1 - 0.04) / 0.5)
    assert_allclose(kernel_eval(fam, [1.0, 0.1], bw), expected, rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.sampled_from(FAMILIES))
def test_kernel_nonnegative_and_symmetric(u, variant):
    k = KernelFamily(variant)
    assert k(u) >= 0.0
    assert k(u) == k(-u)
