import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hirank.estimators import (
    BandEdgeWindow,
    EstimateReport,
    WindowError,
    cartan_measure_check,
    dos_estimate,
    evls_tail_curve,
    gamma_inf,
    gamma_L2r,
    gamma_Lnr,
    generalized_minami_curve,
    nesting_holds,
    power_law_fit,
    run_ensemble,
    weak_minami_curve,
    wegner_curve,
    wilson_interval,
)
from hirank.lattice import LatticeGeometry
from hirank.operators import Configuration, hamiltonian
from hirank.randomness import Density, SeedSpec, sample_configuration
from hirank.spectral import IntervalSet, count_in, eigensolve, spac

UNIFORM = Density.uniform()


@pytest.fixture(scope="module")
def small():
    return run_ensemble(LatticeGeometry(1, 16, 2), UNIFORM, 2000, 1)


@pytest.fixture(scope="module")
def edge32():
    return run_ensemble(LatticeGeometry(1, 32, 2), UNIFORM, 100_000, 4)


# ---------------------------------------------------------------------------
# constants and windows
# ---------------------------------------------------------------------------


def test_gamma_Lnr_examples():
    assert gamma_Lnr(10**12, 2, 2, 1) == pytest.approx(1.0, abs=1e-4)
    for L in (1, 10, 10**6):
        assert gamma_Lnr(L, 1, 2, 1) < 0
    assert gamma_Lnr(128, 2, 2, 1) == pytest.approx(2 * (0.5 - 9 * math.sqrt(2) / 32), rel=1e-14)


def test_gamma_variants():
    assert gamma_inf(2) == pytest.approx(1.0)
    assert gamma_L2r(10**12, 2, 1) == pytest.approx(1.0, abs=1e-4)
    # the two-eigenvalue form carries sqrt(L) where the general form has sqrt(2L)
    assert gamma_L2r(128, 2, 1) == pytest.approx(2 * (0.5 - 9 * math.sqrt(2) / (math.sqrt(128) * 2)))
    assert gamma_L2r(128, 2, 1) < gamma_Lnr(128, 2, 2, 1)
    assert gamma_Lnr(8, 2, 2, 2) < 0


def test_band_edge_window():
    w = BandEdgeWindow(0.5, 1, 2)
    assert w.intervals.intervals == ((0.0, 0.5), (4.5, 5.0))
    assert w.edge_window(0.1, "upper").intervals == ((4.9, 5.0),)
    assert w.edge_window(0.1, "lower", "inner").intervals == ((0.4, 0.5),)
    with pytest.raises(WindowError):
        BandEdgeWindow(1.0, 1, 2)
    with pytest.raises(WindowError):
        BandEdgeWindow(0.0, 1, 2)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


def test_ensemble_matches_per_trial_oracle():
    g = LatticeGeometry(2, 4, 2)
    dens = Density.tilt(0.3)
    ens = run_ensemble(g, dens, 5, 77, bc="dirichlet", label="x")
    for t in range(5):
        conf = sample_configuration(g, dens, SeedSpec(77, t, "x"))
        np.testing.assert_allclose(ens.eigenvalues[t], eigensolve(hamiltonian(conf, "dirichlet")).eigenvalues, atol=1e-12)


def test_ensemble_thread_independence():
    g = LatticeGeometry(1, 8, 2)
    a = run_ensemble(g, UNIFORM, 5000, 3, threads=1)
    b = run_ensemble(g, UNIFORM, 5000, 3, threads=4)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    ra = wegner_curve(a, 0.5, [0.1, 0.2]).to_json()
    rb = wegner_curve(b, 0.5, [0.1, 0.2]).to_json()
    assert ra == rb


def test_ensemble_spacs_match_spectral(small):
    I = IntervalSet(((0.0, 0.9), (1.0, 2.0)))
    s = small.spacs(I)
    c = small.counts(I)
    for t in range(0, 2000, 97):
        assert s[t] == spac(small.eigenvalues[t], I)
        assert c[t] == count_in(small.eigenvalues[t], I)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def test_wilson_shrinks_like_inverse_sqrt():
    widths = []
    for n in (100, 10_000, 1_000_000):
        lo, hi = wilson_interval(n // 4, n)
        widths.append(float(hi - lo))
        assert 0 <= lo <= 0.25 <= hi <= 1
    assert widths[0] / widths[1] == pytest.approx(10, rel=0.05)
    assert widths[1] / widths[2] == pytest.approx(10, rel=0.01)
    lo, hi = wilson_interval(0, 50)
    assert lo == 0 and 0 < hi < 0.1


def test_power_law_fit_recovers_exponent():
    w = np.array([0.05, 0.1, 0.2, 0.4])
    p = 1e-3 * (w / 0.4) ** 2
    fit = power_law_fit(w, np.round(p * 1e7).astype(int), 10**7)
    assert fit.ci_low <= 2.0 <= fit.ci_high
    assert fit.slope == pytest.approx(2.0, abs=0.02)
    unb = power_law_fit(w[:3], [0, 0, 150], 10**5)
    assert unb.unbounded and unb.slope == math.inf and unb.ci_low > 1
    assert power_law_fit(w, [0, 0, 0, 0], 100) is None


def test_report_serialization():
    rep = EstimateReport("q", {"a": 1}, [0.1, 0.2], [0.0, 0.5], [0.0, 0.3], [0.1, 0.7], 10, 3, slope=math.inf)
    data = json.loads(rep.to_json())
    assert set(data) >= {"quantity", "params", "grid", "estimate", "ci_low", "ci_high", "slope", "n_trials", "seed"}
    assert data["slope"] is None
    rows = rep.to_csv().strip().split("\n")
    assert rows[0] == "grid,estimate,ci_low,ci_high" and len(rows) == 3
    with pytest.raises(ValueError):
        EstimateReport("q", {}, [0.1], [0.5], [0.6], [0.4], 10, 0)


# ---------------------------------------------------------------------------
# Wegner / Minami
# ---------------------------------------------------------------------------


def test_wegner_trivial_windows(small):
    rep = wegner_curve(small, 2.5, [0.0, 20.0])
    assert rep.estimate[0] == 0 and rep.series["p_at_least_one"]["estimate"][0] == 0
    assert rep.estimate[1] == 16 and rep.series["p_at_least_one"]["estimate"][1] == 1


def test_wegner_validation(small):
    with pytest.raises(ValueError):
        wegner_curve(small, 0.5, [])
    tiny = run_ensemble(LatticeGeometry(1, 4, 2), UNIFORM, 50, 0)
    with pytest.raises(ValueError):
        wegner_curve(tiny, 0.5, [0.1])


def test_wegner_linear_scaling():
    ens = run_ensemble(LatticeGeometry(1, 16, 2), UNIFORM, 20_000, 8)
    rep = wegner_curve(ens, 0.5, [0.02, 0.04, 0.08])
    m = rep.estimate
    assert 1.4 <= m[1] / m[0] <= 2.6 and 1.4 <= m[2] / m[1] <= 2.6
    assert 0.8 <= rep.slope <= 1.2


def test_generalized_minami_basics(small):
    rep = generalized_minami_curve(small, 0.5, [0.0, 0.2])
    assert rep.estimate[0] == 0 and rep.extra["threshold"] == 3
    rank_one = run_ensemble(LatticeGeometry(1, 16, 1), UNIFORM, 200, 1)
    assert generalized_minami_curve(rank_one, 2.0, [0.5]).extra["threshold"] == 2


@settings(max_examples=30)
@given(st.floats(-1, 6), st.floats(0, 4))
def test_nesting(small, center, width):
    assert nesting_holds(small, IntervalSet.centered(center, width))


# ---------------------------------------------------------------------------
# band-edge estimators
# ---------------------------------------------------------------------------


def test_weak_minami_zero_width_and_symmetry(small):
    rep = weak_minami_curve(small, 0.9, [0.0, 0.6, 0.9], anchor="inner")
    assert rep.estimate[0] == 0
    up = rep.series["upper"]
    for i in range(3):
        # joint 95% intervals overlap under spectral reflection
        assert rep.ci_low[i] <= up["ci_high"][i] and up["ci_low"][i] <= rep.ci_high[i]
    assert sum(rep.extra["events"]) > 0


def test_weak_minami_rejects_window(small):
    with pytest.raises(WindowError):
        weak_minami_curve(small, 1.0, [0.01])


def test_weak_minami_monotone(edge32):
    rep = weak_minami_curve(edge32, 0.5, [0.04, 0.02, 0.01])
    assert rep.extra["monotone_within_ci"]
    rep_inner = weak_minami_curve(edge32, 0.5, [0.04, 0.02, 0.01], anchor="inner")
    assert rep_inner.extra["monotone_within_ci"]


def test_evls_trivial(small):
    rep = evls_tail_curve(small, 0.9, [0.0, 100.0])
    assert rep.estimate[0] == 0
    two = np.count_nonzero(small.counts(BandEdgeWindow(0.9, 1, 2).intervals) >= 2)
    assert rep.extra["events"][1] == two


def test_evls_monotone_and_inclusion(edge32):
    rep = evls_tail_curve(edge32, 0.5, [1e-2, 1e-3, 1e-6])
    assert rep.extra["inclusion_violations"] == 0
    assert rep.extra["nonincreasing_as_delta_shrinks"] and rep.extra["ci_ordered"]
    assert rep.estimate[2] <= rep.estimate[1] <= rep.estimate[0]


# ---------------------------------------------------------------------------
# density of states and Cartan measure
# ---------------------------------------------------------------------------


def test_dos_far_outside_is_zero(small):
    assert dos_estimate(small, [-3.0, 9.0], 0.01).estimate == [0.0, 0.0]
    with pytest.raises(ValueError):
        dos_estimate(small, [1.0], 0.0)


def test_dos_normalization(small):
    h = 0.05
    grid = np.arange(0.0, 5.0 + 1e-9, 2 * h)
    rep = dos_estimate(small, grid, h)
    assert sum(rep.estimate) * 2 * h == pytest.approx(1.0, abs=0.02)


def test_dos_matches_wegner(small):
    h = 0.1
    dos = dos_estimate(small, [0.5], h)
    weg = wegner_curve(small, 0.5, [2 * h])
    mass = dos.estimate[0] * 2 * h * 16
    assert weg.ci_low[0] <= mass <= weg.ci_high[0]
    assert mass == pytest.approx(weg.estimate[0], rel=1e-12)


def test_cartan_trivial_levels():
    g = LatticeGeometry(1, 8, 2)
    base = Configuration(g, [0.3, 0.5, 0.6, 0.4])
    ev = eigensolve(hamiltonian(base)).eigenvalues
    I = IntervalSet.single(ev[0] - 0.05, ev[1] + 0.05)
    rep = cartan_measure_check(base, 0.01, I, [0.0, 10.0], 500, 0)
    assert rep.estimate == [0.0, 1.0]


def test_cartan_contract_errors():
    g = LatticeGeometry(1, 8, 2)
    base = Configuration(g, [0.3, 0.5, 0.6, 0.4])
    with pytest.raises(ValueError):
        cartan_measure_check(base, 0.01, IntervalSet.single(40, 41), [1e-3], 10, 0)
    with pytest.raises(ValueError):
        cartan_measure_check(base, 0.35, IntervalSet.single(0, 1), [1e-3], 10, 0)
