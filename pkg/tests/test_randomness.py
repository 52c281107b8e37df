import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from hirank.lattice import LatticeGeometry
from hirank.operators import Configuration
from hirank.randomness import (
    Density,
    SeedSpec,
    ks_critical_value,
    sample_block_values,
    sample_configuration,
    shift_and_scale_configuration,
    stream_bitgen,
)


def test_inverse_cdf_examples():
    assert Density.tilt(0.0).ppf(0.5) == pytest.approx(0.5)
    assert Density.uniform().ppf(0.25) == 0.25


@given(st.floats(-0.95, 0.95), st.floats(0, 1))
def test_ppf_inverts_cdf(a, u):
    dens = Density.tilt(a)
    assert dens.cdf(dens.ppf(u)) == pytest.approx(u, abs=1e-12)


@pytest.mark.parametrize("a", [0.0, 0.3, -0.6])
def test_density_invariants(a):
    dens = Density.tilt(a)
    x = np.linspace(0, 1, 2001)
    p = dens.pdf(x)
    assert np.trapezoid(p, x) == pytest.approx(1.0, abs=1e-9)
    assert np.all(p >= dens.rho_min - 1e-15) and np.all(p <= dens.rho_max + 1e-15)
    slopes = np.abs(np.diff(p) / np.diff(x))
    assert np.all(slopes <= dens.lipschitz + 1e-9)
    assert dens.pdf(1.5) == 0 and dens.pdf(-0.1) == 0


def test_tilt_slope_range():
    with pytest.raises(ValueError):
        Density.tilt(1.0)


def test_uniform_mean_lln():
    values = sample_block_values(LatticeGeometry(1, 1000), Density.uniform(), 42, "lln", range(1000))
    assert abs(values.mean() - 0.5) <= 3 * (1 / np.sqrt(12)) / 1e3


@pytest.mark.parametrize("density", [Density.uniform(), Density.tilt(0.5), Density.tilt(-0.4)])
def test_ks_against_analytic_cdf(density):
    draws = sample_block_values(LatticeGeometry(1, 100), density, 9, "ks", range(1000)).ravel()
    assert draws.size == 10**5
    stat = stats.kstest(draws, density.cdf).statistic
    assert stat < ks_critical_value(draws.size, 0.01)


def test_ks_critical_value_matches_scipy():
    assert ks_critical_value(10**5, 0.01) == pytest.approx(stats.kstwo.ppf(0.99, 10**5), rel=2e-3)


def test_reproducible_and_distinct_streams():
    g = LatticeGeometry(2, 8, 2)
    dens = Density.uniform()
    a = sample_configuration(g, dens, SeedSpec(5, 17, "x"))
    b = sample_configuration(g, dens, SeedSpec(5, 17, "x"))
    np.testing.assert_array_equal(a.values, b.values)
    for other in (SeedSpec(5, 18, "x"), SeedSpec(6, 17, "x"), SeedSpec(5, 17, "y")):
        assert not np.array_equal(a.values, sample_configuration(g, dens, other).values)
    assert np.all((a.values >= 0) & (a.values <= 1))


def test_batched_sampling_matches_per_trial():
    g = LatticeGeometry(1, 8, 2)
    dens = Density.tilt(0.2)
    batch = sample_block_values(g, dens, 3, "lbl", [4, 0, 9])
    for row, t in zip(batch, [4, 0, 9]):
        np.testing.assert_array_equal(row, sample_configuration(g, dens, SeedSpec(3, t, "lbl")).values)


def test_stream_bitgen_independent_of_order():
    first = np.random.Generator(stream_bitgen(1, 2, "a")).random(3)
    np.random.Generator(stream_bitgen(1, 7, "a")).random(100)
    np.testing.assert_array_equal(first, np.random.Generator(stream_bitgen(1, 2, "a")).random(3))


def test_shift_and_scale():
    g = LatticeGeometry(1, 4, 2)
    omega = Configuration(g, [0.2, 0.4])
    np.testing.assert_array_equal(shift_and_scale_configuration(omega, 0.0, 1.0).values, omega.values)
    np.testing.assert_allclose(shift_and_scale_configuration(omega, 0.1, 1.0).values, [0.3, 0.5])
    composed = shift_and_scale_configuration(shift_and_scale_configuration(omega, 0.1, 1.0), 0.0, 0.7)
    np.testing.assert_allclose(composed.values, shift_and_scale_configuration(omega, 0.1, 0.7).values)
