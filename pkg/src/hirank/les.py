"""Local eigenvalue statistics: the rescaled point process xi around an energy,
its superposition zeta over independent subcubes, the uana conditions, Poisson
goodness of fit with a calibration harness, and an exact-tie multiplicity check.

Windows are given in rescaled units s = L^d (E - E_j).
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from hirank.estimators import (
    BandEdgeWindow,
    TrialEnsemble,
    chunk_size,
    gamma_inf,
    mean_interval,
    solve_batch,
    wilson_interval,
)
from hirank.lattice import GeometryError, LatticeGeometry
from hirank.operators import BoundaryCondition, Configuration, hamiltonian, laplacian
from hirank.randomness import Density, SeedSpec, sample_block_values
from hirank.spectral import eigensolve

MIN_FIT_TRIALS = 200
TIE_TOL = 1e-12

Window = tuple[float, float]


def _window(window) -> Window:
    a, b = (float(x) for x in window)
    if not a <= b:
        raise ValueError("window must satisfy a <= b")
    return a, b


def rescale(eigenvalues: np.ndarray, E: float, volume: int) -> np.ndarray:
    """s_j = |Lambda_L| (E - E_j)."""
    return volume * (E - eigenvalues)


def _in_window(points: np.ndarray, window: Window) -> np.ndarray:
    return (points >= window[0]) & (points <= window[1])


# ---------------------------------------------------------------------------
# Point process samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointProcessSample:
    points: np.ndarray
    kind: str  # "xi" or "zeta"
    E: float
    L: int
    ell: Optional[int] = None

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")

    def to_csv_rows(self, trial: int) -> list[str]:
        return [f"{trial},{p:.17g}" for p in self.points]


def _check_subcube(geometry: LatticeGeometry, ell: int) -> None:
    if ell < 1 or ell % geometry.r:
        raise GeometryError("ell mod r != 0")
    if geometry.L % ell:
        raise GeometryError("L mod ell != 0")


def subcube_origins(geometry: LatticeGeometry, ell: int) -> list[tuple[int, ...]]:
    """0-based origins of the (L/ell)^d subcubes, row-major."""
    _check_subcube(geometry, ell)
    return list(itertools.product(range(0, geometry.L, ell), repeat=geometry.d))


def subcube_block_maps(geometry: LatticeGeometry, ell: int) -> np.ndarray:
    """(M, (ell/r)^d) global block indices of each subcube's blocks, in the subcube's own order."""
    r = geometry.r
    grid = np.arange(geometry.n_blocks).reshape((geometry.blocks_per_side,) * geometry.d)
    maps = []
    for origin in subcube_origins(geometry, ell):
        sl = tuple(slice(o // r, (o + ell) // r) for o in origin)
        maps.append(grid[sl].reshape(-1))
    return np.array(maps)


def _check_energy(geometry: LatticeGeometry, E: float) -> None:
    if not 0.0 < E < 4.0 * geometry.d + 1.0:
        raise ValueError("E must lie in (0, 4d+1)")


def build_xi(configuration: Configuration, E: float, window) -> PointProcessSample:
    g = configuration.geometry
    _check_energy(g, E)
    window = _window(window)
    s = rescale(eigensolve(hamiltonian(configuration)).eigenvalues, E, g.n_sites)
    return PointProcessSample(np.sort(s[_in_window(s, window)]), "xi", E, g.L)


def build_zeta(configuration: Configuration, E: float, ell: int, window) -> PointProcessSample:
    """Pooled points of the independent Simple-bc subcube Hamiltonians, scaled by the full volume."""
    g = configuration.geometry
    _check_energy(g, E)
    window = _window(window)
    pts = []
    for origin in subcube_origins(g, ell):
        sub = configuration.restrict(origin, ell)
        s = rescale(eigensolve(hamiltonian(sub)).eigenvalues, E, g.n_sites)
        pts.append(s[_in_window(s, window)])
    return PointProcessSample(np.sort(np.concatenate(pts)), "zeta", E, g.L, ell)


# ---------------------------------------------------------------------------
# Ensembles of full and subcube spectra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LesEnsemble:
    """Full-cube spectra (N, L^d) and subcube spectra (N, M, ell^d) of the same trials."""

    geometry: LatticeGeometry
    density: Density
    ell: int
    master_seed: int
    label: str
    full: np.ndarray = field(repr=False)
    sub: np.ndarray = field(repr=False)

    @property
    def n_trials(self) -> int:
        return self.full.shape[0]

    @property
    def n_subcubes(self) -> int:
        return self.sub.shape[1]

    def xi_points(self, E: float, window) -> list[np.ndarray]:
        window = _window(window)
        s = rescale(self.full, E, self.geometry.n_sites)
        return [np.sort(row[_in_window(row, window)]) for row in s]

    def zeta_points(self, E: float, window) -> list[np.ndarray]:
        window = _window(window)
        s = rescale(self.sub.reshape(self.n_trials, -1), E, self.geometry.n_sites)
        return [np.sort(row[_in_window(row, window)]) for row in s]

    def xi_counts(self, E: float, window) -> np.ndarray:
        s = rescale(self.full, E, self.geometry.n_sites)
        return np.count_nonzero(_in_window(s, _window(window)), axis=1)

    def subcube_counts(self, E: float, window) -> np.ndarray:
        """(N, M) counts xi^{ell,j}(I) per subcube."""
        s = rescale(self.sub, E, self.geometry.n_sites)
        return np.count_nonzero(_in_window(s, _window(window)), axis=2)

    def as_trial_ensemble(self) -> TrialEnsemble:
        return TrialEnsemble(self.geometry, self.density, BoundaryCondition.SIMPLE, self.master_seed, self.label, self.full)


def run_les_ensemble(
    geometry: LatticeGeometry,
    density: Density,
    n_trials: int,
    master_seed: int,
    ell: Optional[int] = None,
    label: str = "les",
    threads: int = 1,
) -> LesEnsemble:
    """Diagonalize each sampled configuration on the full cube and on its subcubes.

    Seeding and batching match :func:`hirank.estimators.run_ensemble`, so the
    full spectra coincide with that function's output for the same label.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    ell = geometry.L if ell is None else int(ell)
    maps = subcube_block_maps(geometry, ell)
    sub_geom = geometry.sub_geometry(ell)
    M = maps.shape[0]
    H_full = laplacian(geometry, BoundaryCondition.SIMPLE)
    H_sub = laplacian(sub_geom, BoundaryCondition.SIMPLE)
    full = np.empty((n_trials, geometry.n_sites))
    sub = np.empty((n_trials, M, sub_geom.n_sites))
    step = chunk_size(geometry.n_sites)

    def work(start: int) -> None:
        stop = min(start + step, n_trials)
        values = sample_block_values(geometry, density, master_seed, label, range(start, stop))
        full[start:stop] = solve_batch(H_full, geometry.site_blocks, values)
        sv = values[:, maps].reshape(-1, maps.shape[1])
        sub[start:stop] = solve_batch(H_sub, sub_geom.site_blocks, sv).reshape(stop - start, M, -1)

    starts = range(0, n_trials, step)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return LesEnsemble(geometry, density, ell, int(master_seed), label, full, sub)


# ---------------------------------------------------------------------------
# xi / zeta proximity
# ---------------------------------------------------------------------------


def matching_distance(x: np.ndarray, y: np.ndarray, penalty: float) -> float:
    """Optimal 1-d matching cost between two point multisets.

    Matched pairs cost |x_i - y_j|, unmatched points cost ``penalty``. With
    sorted inputs an optimal matching is non-crossing, so a monotone DP is exact.
    """
    x, y = np.sort(x), np.sort(y)
    n, m = x.size, y.size
    D = np.empty((n + 1, m + 1))
    D[:, 0] = penalty * np.arange(n + 1)
    D[0, :] = penalty * np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + abs(x[i - 1] - y[j - 1]), D[i - 1, j] + penalty, D[i, j - 1] + penalty)
    return float(D[n, m])


def xi_zeta_proximity(ensemble: LesEnsemble, E: float, window) -> dict:
    window = _window(window)
    penalty = 0.5 * (window[1] - window[0])
    xs, zs = ensemble.xi_points(E, window), ensemble.zeta_points(E, window)
    dist = np.array([matching_distance(x, z, penalty) for x, z in zip(xs, zs)])
    return {
        "ell": ensemble.ell,
        "L": ensemble.geometry.L,
        "window": list(window),
        "mean": float(dist.mean()),
        "quantiles": {str(q): float(np.quantile(dist, q)) for q in (0.5, 0.9, 0.99)},
        "n_trials": ensemble.n_trials,
    }


# ---------------------------------------------------------------------------
# uana conditions and the counting identity
# ---------------------------------------------------------------------------


def counting_identity(counts: np.ndarray) -> dict:
    """sum_trials count = sum_{t>=1} #{trials : count >= t}, in exact integers."""
    c = np.asarray(counts, dtype=np.int64).reshape(-1)
    lhs = int(c.sum())
    top = int(c.max()) if c.size else 0
    ladder = [int(np.count_nonzero(c >= t)) for t in range(1, top + 1)]
    return {"total": lhs, "ladder": ladder, "ladder_sum": int(sum(ladder)), "holds": lhs == int(sum(ladder))}


def uana_terms(ensemble: LesEnsemble, E: float, window) -> dict:
    """Per-subcube occupation probabilities, xi intensity and the counting identity for one ensemble, with intervals."""
    counts = ensemble.subcube_counts(E, window)
    N, M = counts.shape
    ge1 = np.count_nonzero(counts >= 1, axis=0)
    ge2_rows = np.count_nonzero(counts >= 2, axis=1)
    ge1_rows = np.count_nonzero(counts >= 1, axis=1)
    j_max = int(np.argmax(ge1))
    lo, hi = wilson_interval(ge1[j_max], N)
    s1, s1_lo, s1_hi = mean_interval(ge1_rows)
    s2, s2_lo, s2_hi = mean_interval(ge2_rows)
    xi_mean, xi_lo, xi_hi = mean_interval(ensemble.xi_counts(E, window))
    zeta_total = int(counts.sum())
    ladder = sum(int(np.count_nonzero(counts >= t)) for t in range(1, int(counts.max(initial=0)) + 1))
    return {
        "L": ensemble.geometry.L,
        "ell": ensemble.ell,
        "subcubes": M,
        "max_p_ge1": float(ge1[j_max] / N),
        "max_p_ge1_ci": [float(lo), float(hi)],
        "sum_p_ge1": s1,
        "sum_p_ge1_ci": [s1_lo, s1_hi],
        "sum_p_ge2": s2,
        "sum_p_ge2_ci": [s2_lo, s2_hi],
        "intensity_times_length": xi_mean,
        "intensity_times_length_ci": [xi_lo, xi_hi],
        "zeta_total": zeta_total,
        "zeta_ladder_sum": ladder,
        "counting_identity_holds": zeta_total == ladder,
    }


def uana_condition_check(
    d: int,
    r: int,
    L_values: Sequence[int],
    ell,
    E: float,
    window,
    n_trials: int,
    master_seed: int,
    density: Density = Density.uniform(),
    threads: int = 1,
) -> dict:
    """Run the three uana quantities along a ladder of L.

    ``ell`` is an integer side or a callable L -> side.
    """
    rows = []
    for L in L_values:
        side = ell(L) if callable(ell) else int(ell)
        ens = run_les_ensemble(LatticeGeometry(d, L, r), density, n_trials, master_seed, side, threads=threads)
        rows.append(uana_terms(ens, E, window))

    def trend(key: str) -> bool:
        vals = [row[key] for row in rows]
        return all(b <= a for a, b in zip(vals, vals[1:]))

    return {
        "E": E,
        "window": list(_window(window)),
        "rows": rows,
        "max_p_ge1_decreasing": trend("max_p_ge1"),
        "sum_p_ge2_decreasing": trend("sum_p_ge2"),
    }


# ---------------------------------------------------------------------------
# Poisson goodness of fit
# ---------------------------------------------------------------------------


@dataclass
class PoissonFitReport:
    window: list
    n_trials: int
    histogram: list
    intensity: float  # per unit s
    lam: float  # intensity * |I|
    chi2: float
    df: int
    p_value: float
    ks_stat: Optional[float]
    ks_p_value: Optional[float]
    n_gaps: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for p in (self.p_value, self.ks_p_value):
            if p is not None and math.isfinite(p) and not 0.0 <= p <= 1.0:
                raise ValueError("p-values must lie in [0, 1]")

    def to_dict(self) -> dict:
        def num(x):
            if x is None:
                return None
            return float(x) if math.isfinite(x) else None

        out = {
            "window": self.window,
            "n_trials": self.n_trials,
            "histogram": self.histogram,
            "intensity": num(self.intensity),
            "lam": num(self.lam),
            "chi2": num(self.chi2),
            "df": self.df,
            "p_value": num(self.p_value),
            "ks_stat": num(self.ks_stat),
            "ks_p_value": num(self.ks_p_value),
            "n_gaps": self.n_gaps,
        }
        if self.extra:
            out["extra"] = self.extra
        return out


def poisson_chi_square(counts: np.ndarray, lam: float, min_expected: float = 5.0) -> tuple[float, int, float, list]:
    """Pearson chi-square of counts against Poisson(lam), one fitted parameter.

    Cells 0, 1, ..., K-1 and a closing ">= K" cell; adjacent cells are merged
    until each expects at least ``min_expected``. Returns (stat, df, p, cells).
    """
    counts = np.asarray(counts, dtype=np.int64)
    N = counts.size
    K = int(counts.max(initial=0)) + 1
    pmf = stats.poisson.pmf(np.arange(K), lam)
    expected = list(N * pmf) + [N * stats.poisson.sf(K - 1, lam)]
    observed = list(np.bincount(counts, minlength=K)[:K]) + [0]
    cells = [[o, e] for o, e in zip(observed, expected)]
    # merge from the tail, then from the head
    while len(cells) > 1 and cells[-1][1] < min_expected:
        o, e = cells.pop()
        cells[-1][0] += o
        cells[-1][1] += e
    while len(cells) > 1 and cells[0][1] < min_expected:
        o, e = cells.pop(0)
        cells[0][0] += o
        cells[0][1] += e
    obs = np.array([c[0] for c in cells], dtype=float)
    exp = np.array([c[1] for c in cells], dtype=float)
    df = len(cells) - 2
    if df < 1:
        return math.nan, df, math.nan, cells
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return stat, df, float(stats.chi2.sf(stat, df)), [[int(o), float(e)] for o, e in cells]


def truncated_gap_cdf(g, rate: float, width: float):
    """CDF of pooled consecutive gaps of a rate-``rate`` Poisson process seen in a window of ``width``.

    Gap density is proportional to (W - g) exp(-rate g) on [0, W]; for W rate
    large it approaches the exponential law.
    """
    g = np.clip(np.asarray(g, dtype=float), 0.0, width)

    def F(x):
        if rate == 0:
            return width * x - 0.5 * x * x
        e = np.exp(-rate * x)
        return width * (1.0 - e) / rate - (1.0 - e * (1.0 + rate * x)) / rate**2

    return F(g) / F(width)


def fit_point_lists(points: Sequence[np.ndarray], window, extra: Optional[dict] = None) -> PoissonFitReport:
    """Chi-square on window counts and KS on consecutive gaps, for any per-trial point lists."""
    a, b = _window(window)
    width = b - a
    counts = np.array([len(p) for p in points], dtype=np.int64)
    N = counts.size
    lam = float(counts.mean())
    rate = lam / width if width > 0 else math.nan
    stat, df, p, cells = poisson_chi_square(counts, lam)
    gaps = np.concatenate([np.diff(np.sort(p)) for p in points]) if N else np.empty(0)
    if gaps.size >= 2 and width > 0:
        ks = stats.kstest(gaps, lambda x: truncated_gap_cdf(x, rate, width))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat = ks_p = None
    hist = np.bincount(counts).tolist()
    ex = {"cells": cells}
    if extra:
        ex.update(extra)
    return PoissonFitReport([a, b], N, hist, rate, lam, stat, df, p, ks_stat, ks_p, int(gaps.size), ex)


def poisson_fit(ensemble: LesEnsemble, E: float, windows: Sequence, include_zeta: bool = True) -> list[PoissonFitReport]:
    """Poisson tests of xi (and zeta) window counts around E."""
    g = ensemble.geometry
    if ensemble.n_trials < MIN_FIT_TRIALS:
        raise ValueError(f"Poisson fit needs at least {MIN_FIT_TRIALS} trials")
    _check_energy(g, E)
    if g.d >= 2 and E >= gamma_inf(g.r):
        warnings.warn("E lies outside the band-edge window; localization is not assured", stacklevel=2)
    reports = []
    for w in windows:
        xi_pts = ensemble.xi_points(E, w)
        ident = counting_identity([len(p) for p in xi_pts])
        extra = {"counting_identity": ident}
        if include_zeta:
            z = fit_point_lists(ensemble.zeta_points(E, w), w)
            extra["zeta"] = z.to_dict()
        reports.append(fit_point_lists(xi_pts, w, extra))
    return reports


def synthetic_poisson_points(rate: float, window, n_trials: int, master_seed: int, rep: int) -> list[np.ndarray]:
    """Homogeneous Poisson points in the window, one list per trial."""
    a, b = _window(window)
    rng = SeedSpec(master_seed, rep, f"calibration:{a}:{b}").generator()
    n = rng.poisson(rate * (b - a), n_trials)
    return [np.sort(rng.uniform(a, b, k)) for k in n]


def calibration(
    rate: float,
    windows: Sequence,
    n_trials: int,
    repetitions: int,
    master_seed: int,
    alpha: float = 0.05,
) -> dict:
    """Rejection rates of the fit pipeline on synthetic Poisson data.

    ``passes`` when the one-sided 95% Wilson lower bound of each rejection
    rate does not exceed ``alpha`` (no significant excess over nominal).
    """
    out = {"alpha": alpha, "repetitions": repetitions, "n_trials": n_trials, "rate": rate, "windows": []}
    passes = True
    for w in windows:
        chi_rej = ks_rej = 0
        pvals = []
        for rep in range(repetitions):
            fit = fit_point_lists(synthetic_poisson_points(rate, w, n_trials, master_seed, rep), w)
            pvals.append(fit.p_value)
            chi_rej += fit.p_value < alpha
            ks_rej += fit.ks_p_value is not None and fit.ks_p_value < alpha
        lo, _ = wilson_interval(chi_rej, repetitions, alpha=0.10)
        ks_lo, _ = wilson_interval(ks_rej, repetitions, alpha=0.10)
        ok = bool(lo <= alpha and ks_lo <= alpha)
        passes &= ok
        out["windows"].append(
            {
                "window": list(_window(w)),
                "chi2_rejection_rate": chi_rej / repetitions,
                "chi2_rate_lower_bound": float(lo),
                "ks_rejection_rate": ks_rej / repetitions,
                "ks_rate_lower_bound": float(ks_lo),
                "uniformity_ks_p": float(stats.kstest(pvals, "uniform").pvalue),
                "passes": ok,
            }
        )
    out["passes"] = passes
    return out


# ---------------------------------------------------------------------------
# Multiplicity
# ---------------------------------------------------------------------------


def exact_ties(eigenvalues: np.ndarray, intervals, tol: float = TIE_TOL) -> np.ndarray:
    """Per-trial number of consecutive in-set pairs closer than ``tol``."""
    ev = np.atleast_2d(eigenvalues)
    inside = intervals.contains(ev)
    both = inside[:, 1:] & inside[:, :-1]
    return np.count_nonzero(both & (np.diff(ev, axis=1) < tol), axis=1)


def multiplicity_check(ensemble: TrialEnsemble, E: float) -> dict:
    g = ensemble.geometry
    window = BandEdgeWindow(E, g.d, g.r)
    I = window.intervals
    ties = exact_ties(ensemble.eigenvalues, I)
    spacs = ensemble.spacs(I)
    finite = spacs[np.isfinite(spacs)]
    half = ensemble.n_trials // 2
    def frac(x, t):
        return float(np.count_nonzero(x < t) / x.size) if x.size else 0.0

    first = spacs[:half][np.isfinite(spacs[:half])]
    return {
        "E": E,
        "n_trials": ensemble.n_trials,
        "exact_tie_pairs": int(ties.sum()),
        "trials_with_ties": int(np.count_nonzero(ties)),
        "min_spacing_quantiles": {str(q): float(np.quantile(finite, q)) for q in (0.001, 0.01, 0.1, 0.5)} if finite.size else {},
        "fraction_below_1e-8": {"first_half": frac(first, 1e-8), "all": frac(finite, 1e-8)},
    }


__all__ = [
    "LesEnsemble",
    "PoissonFitReport",
    "PointProcessSample",
    "build_xi",
    "build_zeta",
    "calibration",
    "counting_identity",
    "exact_ties",
    "fit_point_lists",
    "matching_distance",
    "multiplicity_check",
    "poisson_chi_square",
    "poisson_fit",
    "run_les_ensemble",
    "subcube_block_maps",
    "subcube_origins",
    "synthetic_poisson_points",
    "truncated_gap_cdf",
    "uana_condition_check",
    "uana_terms",
    "xi_zeta_proximity",
]
