import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hirank.lattice import LatticeGeometry
from hirank.operators import BoundaryCondition as BC, Configuration, analytic_bc_spectrum, hamiltonian, laplacian
from hirank.spectral import (
    IntervalSet,
    Spectrum,
    block_weights,
    cluster_mean,
    cluster_report,
    count_in,
    disc,
    eigensolve,
    feynman_hellmann_alpha,
    feynman_hellmann_alphas,
    spac,
    spectral_projection,
    weyl_rank_m_check,
)

FULL = IntervalSet.single(0.0, 4.0)
finite = st.floats(-10, 10, allow_nan=False)


# ---------------------------------------------------------------------------
# eigensolve
# ---------------------------------------------------------------------------


def test_eigensolve_examples():
    np.testing.assert_allclose(eigensolve(np.array([[2.0, -1.0], [-1.0, 2.0]])).eigenvalues, [1, 3], atol=1e-14)
    np.testing.assert_array_equal(eigensolve(np.eye(5)).eigenvalues, np.ones(5))
    g = LatticeGeometry(1, 8)
    np.testing.assert_allclose(
        eigensolve(laplacian(g, BC.DIRICHLET)).eigenvalues, analytic_bc_spectrum(g, BC.DIRICHLET), atol=1e-10
    )


def test_eigensolve_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        eigensolve(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_eigensolve_invariants():
    rng = np.random.default_rng(2)
    g = LatticeGeometry(2, 6, 2)
    H = hamiltonian(Configuration(g, rng.random(g.n_blocks)))
    s = eigensolve(H, want_vectors=True)
    assert len(s) == g.n_sites
    assert np.all(np.diff(s.eigenvalues) >= 0)
    V = s.eigenvectors
    assert np.max(np.abs(V.T @ V - np.eye(g.n_sites))) <= 1e-10
    assert np.all(s.residuals(H) <= 1e-9)


def test_csv_export_round_trips():
    s = Spectrum(np.array([1 / 3, 2.0, math.pi]))
    back = np.array([float(x) for x in s.to_csv().split()])
    np.testing.assert_array_equal(back, s.eigenvalues)


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


def test_count_examples():
    assert count_in([1, 3], IntervalSet.single(0, 2)) == 1
    assert count_in([2, 4], IntervalSet.single(2, 4)) == 2
    assert count_in([0, 2, 2, 4], IntervalSet.single(1.5, 2.5)) == 2


def test_spac_examples():
    assert spac([1.0, 1.5, 3.0], FULL) == 0.5
    assert spac([2.0, 2.0], FULL) == 0.0
    assert spac([1.0], FULL) == math.inf


def test_disc_examples():
    assert disc([1.0, 2.0, 3.0], FULL) == pytest.approx((1 - 2) ** 2 * (1 - 3) ** 2 * (2 - 3) ** 2)
    assert disc([2.0, 2.0], FULL) == 0.0
    assert disc([1.5], FULL) == 1.0
    assert disc([], FULL) == 1.0


def test_cluster_report_examples():
    rep = cluster_report([0.5, 0.6, 3.0], IntervalSet.single(0, 1))
    assert rep.n == 2 and rep.mean == pytest.approx(0.55) and rep.gap_to_rest == pytest.approx(2.0)
    assert cluster_report([0.5, 0.6], IntervalSet.single(0, 1)).gap_to_rest == math.inf
    empty = cluster_report([2.5, 3.0], IntervalSet.single(0, 1))
    assert empty.n == 0 and empty.mean is None and empty.gap_to_rest == pytest.approx(1.5)


def test_interval_set_validation_and_widen():
    with pytest.raises(ValueError):
        IntervalSet(((0, 2), (1, 3)))
    with pytest.raises(ValueError):
        IntervalSet.single(2, 1)
    merged = IntervalSet(((0, 1), (1.5, 2))).widen(0.3)
    assert merged.intervals == ((-0.3, 2.3),)
    assert IntervalSet.band_edges(0.5, 1).intervals == ((0.0, 0.5), (4.5, 5.0))


# dyadic grid values keep shifts and differences exact in floating point
grid = st.integers(-640, 640).map(lambda k: k / 64)
sorted_spectra = st.lists(grid, min_size=0, max_size=12)


@given(sorted_spectra, grid, st.integers(0, 320).map(lambda k: k / 64), st.integers(-8, 8))
def test_shift_invariance(values, a, w, k):
    c = k * 0.25  # exactly representable shift keeps endpoint membership intact
    I = IntervalSet.single(a, a + w)
    s = np.array(values)
    assert count_in(s + c, I.shift(c)) == count_in(s, I)
    assert spac(s + c, I.shift(c)) == pytest.approx(spac(s, I), abs=1e-9)
    d0, d1 = disc(s, I), disc(s + c, I.shift(c))
    assert d1 == pytest.approx(d0, rel=1e-6, abs=1e-300)


@given(sorted_spectra, finite, st.floats(0, 5), st.floats(0, 5))
def test_monotone_growth(values, a, w, extra):
    I = IntervalSet.single(a, a + w)
    J = IntervalSet.single(a - extra, a + w + extra)
    assert count_in(values, I) <= count_in(values, J)
    assert spac(values, J) <= spac(values, I)


@given(sorted_spectra)
def test_spac_zero_iff_disc_zero(values):
    I = IntervalSet.single(-10, 10)
    if count_in(values, I) >= 2:
        assert (spac(values, I) == 0) == (disc(values, I) == 0)


def test_spac_disc_on_forced_degeneracy():
    values = [0.1, 0.7, 0.7, 1.3]
    assert spac(values, FULL) == 0 and disc(values, FULL) == 0


# ---------------------------------------------------------------------------
# projections and Feynman-Hellmann
# ---------------------------------------------------------------------------


def test_projection_examples():
    H = laplacian(LatticeGeometry(1, 2), BC.SIMPLE)
    s = eigensolve(H, want_vectors=True)
    np.testing.assert_allclose(spectral_projection(s, IntervalSet.single(0, 4)), np.eye(2), atol=1e-12)
    np.testing.assert_allclose(spectral_projection(s, IntervalSet.single(5, 6)), np.zeros((2, 2)))
    np.testing.assert_allclose(spectral_projection(s, IntervalSet.single(0, 2)), np.full((2, 2), 0.5), atol=1e-12)
    with pytest.raises(ValueError):
        spectral_projection(Spectrum(s.eigenvalues), FULL)


def test_projection_invariants():
    rng = np.random.default_rng(3)
    g = LatticeGeometry(2, 6, 3)
    s = eigensolve(hamiltonian(Configuration(g, rng.random(g.n_blocks))), want_vectors=True)
    I = IntervalSet.single(1.0, 3.5)
    P = spectral_projection(s, I)
    assert np.max(np.abs(P @ P - P)) <= 1e-9
    assert np.max(np.abs(P - P.T)) <= 1e-9
    assert round(np.trace(P)) == count_in(s, I)


def test_alpha_whole_spectrum_uniform():
    g = LatticeGeometry(2, 4, 2)
    conf = Configuration(g, [0.1, 0.5, 0.2, 0.9])
    alphas = feynman_hellmann_alphas(conf, IntervalSet.single(-1, 20))
    np.testing.assert_allclose(alphas, np.full(4, 4 / 16), atol=1e-12)


def _isolated_cluster(rng, g, n_min=1, gap=0.1):
    while True:
        conf = Configuration(g, rng.random(g.n_blocks))
        ev = eigensolve(hamiltonian(conf)).eigenvalues
        for i in range(len(ev) - 1):
            for j in range(i, min(i + 3, len(ev) - 1)):
                lo_gap = ev[i] - ev[i - 1] if i > 0 else math.inf
                hi_gap = ev[j + 1] - ev[j]
                if j - i + 1 >= n_min and min(lo_gap, hi_gap) >= 2 * gap + 0.02:
                    I = IntervalSet.single(ev[i] - 0.01, ev[j] + 0.01)
                    return conf, I


def test_alpha_sum_and_finite_difference():
    rng = np.random.default_rng(11)
    for d, L, r in [(1, 12, 2), (2, 6, 2), (2, 6, 3)]:
        g = LatticeGeometry(d, L, r)
        conf, I = _isolated_cluster(rng, g)
        assert cluster_report(eigensolve(hamiltonian(conf)), I).gap_to_rest >= 0.1
        alphas = feynman_hellmann_alphas(conf, I)
        assert alphas.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all((alphas >= -1e-15) & (alphas <= 1 + 1e-15))
        h = 1e-5
        for k in range(g.n_blocks):
            up = cluster_mean(conf.replace(k, conf.values[k] + h), I)
            dn = cluster_mean(conf.replace(k, conf.values[k] - h), I)
            assert abs(alphas[k] - (up - dn) / (2 * h)) <= 1e-6
        assert feynman_hellmann_alpha(conf, I, 0) == pytest.approx(alphas[0])


def test_alpha_requires_cluster():
    conf = Configuration.constant(LatticeGeometry(1, 4, 2), 0.5)
    with pytest.raises(ValueError):
        feynman_hellmann_alphas(conf, IntervalSet.single(50, 60))


def test_block_weights_columns_sum_to_norm():
    rng = np.random.default_rng(0)
    g = LatticeGeometry(2, 4, 2)
    V = np.linalg.qr(rng.normal(size=(16, 5)))[0]
    W = block_weights(Configuration.constant(g, 0.0), V)
    np.testing.assert_allclose(W.sum(axis=0), 1.0)


def test_weyl_rank_bound():
    rng = np.random.default_rng(7)
    conf = Configuration(LatticeGeometry(1, 8, 2), rng.random(4))
    assert weyl_rank_m_check(conf, 1, conf.values[1], IntervalSet.single(0, 2)) == 0
    for d, L, r, trials in [(1, 8, 1, 500), (2, 4, 1, 300), (1, 8, 2, 1000)]:
        g = LatticeGeometry(d, L, r)
        for _ in range(trials):
            conf = Configuration(g, rng.random(g.n_blocks))
            a = rng.uniform(-0.5, 4 * d + 1)
            I = IntervalSet.single(a, a + rng.uniform(0, 3))
            k = int(rng.integers(g.n_blocks))
            assert weyl_rank_m_check(conf, k, rng.uniform(-2, 3), I) <= g.rank
