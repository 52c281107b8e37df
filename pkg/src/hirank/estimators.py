"""Monte Carlo estimators for Wegner, generalized and weak Minami, level-spacing
tails, Cartan-set measures and the density of states, with Wilson intervals
and power-law fits."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats
from statsmodels.stats.proportion import proportion_confint

from hirank.lattice import LatticeGeometry
from hirank.operators import BoundaryCondition, Configuration, hamiltonian, laplacian
from hirank.randomness import Density, sample_block_values
from hirank.spectral import IntervalSet, cluster_report, eigensolve

CHUNK = 2048
CHUNK_ENTRIES = 1 << 22  # matrix entries per batch, ~32 MB of float64


def chunk_size(n_sites: int) -> int:
    """Trials per batch; depends on the matrix size only, never on threads."""
    return max(1, min(CHUNK, CHUNK_ENTRIES // (n_sites * n_sites)))
Z95 = stats.norm.ppf(0.975)
CHI2_95 = stats.chi2.ppf(0.95, 1)


class WindowError(ValueError):
    """Band-edge window outside the admissible range."""


# ---------------------------------------------------------------------------
# Band-edge constants
# ---------------------------------------------------------------------------


def gamma_Lnr(L: int, n: int, r: int, d: int) -> float:
    """gamma_{L,n,r} = 2(1 - cos(pi/r)) (1 - 1/n - 9 sqrt(2) / (sqrt(nL) r^d)).

    May be negative for small L; callers needing a window must reject then.
    """
    if min(L, n, r, d) < 1:
        raise ValueError("L, n, r, d must be >= 1")
    return 2.0 * (1.0 - math.cos(math.pi / r)) * (1.0 - 1.0 / n - 9.0 * math.sqrt(2.0) / (math.sqrt(n * L) * r**d))


def gamma_L2r(L: int, r: int, d: int) -> float:
    """Two-eigenvalue edge constant in the form 2(1 - cos(pi/r))(1/2 - 9 sqrt(2)/(sqrt(L) r^d)).

    Differs from ``gamma_Lnr(L, 2, r, d)`` by a factor sqrt(2) in the volume term.
    """
    return 2.0 * (1.0 - math.cos(math.pi / r)) * (0.5 - 9.0 * math.sqrt(2.0) / (math.sqrt(L) * r**d))


def gamma_inf(r: int) -> float:
    """gamma_{inf,r} = 1 - cos(pi/r), the L -> infinity limit of gamma_{L,2,r}."""
    if r < 1:
        raise ValueError("r must be >= 1")
    return 1.0 - math.cos(math.pi / r)


@dataclass(frozen=True)
class BandEdgeWindow:
    """I_E = [0, E] u [4d+1-E, 4d+1] with 0 < E < gamma_{inf,r}."""

    E: float
    d: int
    r: int

    def __post_init__(self) -> None:
        g = gamma_inf(self.r)
        if not 0.0 < self.E < g:
            raise WindowError(f"E={self.E} must lie in (0, gamma_inf={g:.6g})")

    @property
    def top(self) -> float:
        return 4.0 * self.d + 1.0

    @property
    def intervals(self) -> IntervalSet:
        return IntervalSet.band_edges(self.E, self.d)

    def edge_window(self, delta: float, edge: str = "lower", anchor: str = "outer") -> IntervalSet:
        """Width-delta subinterval of I_E at the outer spectral edge or at the inner end E."""
        if not 0.0 <= delta <= self.E:
            raise WindowError("subinterval width must lie in [0, E]")
        if anchor == "outer":
            a = 0.0
        elif anchor == "inner":
            a = self.E - delta
        else:
            raise ValueError(f"unknown anchor {anchor!r}")
        if edge == "lower":
            return IntervalSet.single(a, a + delta)
        if edge == "upper":
            return IntervalSet.single(self.top - a - delta, self.top - a)
        raise ValueError(f"unknown edge {edge!r}")


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialEnsemble:
    """N seeded trials with full spectra retained; row t is trial t."""

    geometry: LatticeGeometry
    density: Density
    bc: BoundaryCondition
    master_seed: int
    label: str
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def n_trials(self) -> int:
        return self.eigenvalues.shape[0]

    def counts(self, intervals: IntervalSet) -> np.ndarray:
        return np.count_nonzero(intervals.contains(self.eigenvalues), axis=1)

    def spacs(self, intervals: IntervalSet) -> np.ndarray:
        """Per-trial spac over the interval set (+inf with fewer than two)."""
        ev = np.where(intervals.contains(self.eigenvalues), self.eigenvalues, np.nan)
        ev = np.sort(ev, axis=1)  # NaN sorts last
        gaps = np.diff(ev, axis=1)
        out = np.full(self.n_trials, np.inf)
        ok = np.sum(~np.isnan(ev), axis=1) >= 2
        if np.any(ok):
            out[ok] = np.nanmin(gaps[ok], axis=1)
        return out

    def metadata(self) -> dict:
        g = self.geometry
        return {
            "d": g.d,
            "L": g.L,
            "r": g.r,
            "bc": self.bc.value,
            "density": self.density.to_dict(),
            "label": self.label,
        }


def solve_batch(H0: np.ndarray, site_blocks: np.ndarray, values: np.ndarray) -> np.ndarray:
    n = H0.shape[0]
    H = np.broadcast_to(H0, (values.shape[0], n, n)).copy()
    idx = np.arange(n)
    H[:, idx, idx] += values[:, site_blocks]
    return np.linalg.eigvalsh(H)


def run_ensemble(
    geometry: LatticeGeometry,
    density: Density,
    n_trials: int,
    master_seed: int,
    bc: BoundaryCondition | str = BoundaryCondition.SIMPLE,
    label: str = "ensemble",
    threads: int = 1,
) -> TrialEnsemble:
    """Sample and diagonalize ``n_trials`` configurations.

    Work is cut into fixed chunks independent of ``threads``, and every trial
    draws from its own counter-based stream, so the result is bit-identical
    under any thread count.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    bc = BoundaryCondition.parse(bc)
    H0 = laplacian(geometry, bc)
    out = np.empty((n_trials, geometry.n_sites))
    step = chunk_size(geometry.n_sites)
    starts = range(0, n_trials, step)

    def work(start: int) -> None:
        stop = min(start + step, n_trials)
        values = sample_block_values(geometry, density, master_seed, label, range(start, stop))
        out[start:stop] = solve_batch(H0, geometry.site_blocks, values)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return TrialEnsemble(geometry, density, bc, int(master_seed), label, out)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def wilson_interval(successes, trials: int, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = proportion_confint(np.asarray(successes), trials, alpha=alpha, method="wilson")
    return np.clip(np.asarray(lo, dtype=float), 0.0, 1.0), np.clip(np.asarray(hi, dtype=float), 0.0, 1.0)


def mean_interval(samples: np.ndarray) -> tuple[float, float, float]:
    """Mean with a normal 95% standard-error interval."""
    m = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
    return m, m - Z95 * se, m + Z95 * se


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log y on log x over strictly positive pairs."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 2:
        return None
    return float(stats.linregress(np.log(x[keep]), np.log(y[keep])).slope)


@dataclass(frozen=True)
class PowerLawFit:
    """Binomial maximum-likelihood fit of p(w) = B (w / w_max)^beta."""

    slope: float
    ci_low: float
    ci_high: float
    unbounded: bool


def _profile_loglik(beta: float, u: np.ndarray, k: np.ndarray, n: int) -> float:
    # maximize over log B <= 0 for fixed beta
    def negll(logB: float) -> float:
        p = np.exp(logB + beta * np.log(u))
        p = np.clip(p, 1e-300, 1 - 1e-16)
        return -float(np.sum(k * np.log(p) + (n - k) * np.log1p(-p)))

    res = optimize.minimize_scalar(negll, bounds=(-750.0, 0.0), method="bounded", options={"xatol": 1e-10})
    return -float(res.fun)


def _binomial_loglik(p: np.ndarray, k: np.ndarray, n: int) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(k > 0, k * np.log(p), 0.0) + np.where(n - k > 0, (n - k) * np.log1p(-p), 0.0)
    return float(np.sum(terms))


def power_law_fit(widths: Sequence[float], successes: Sequence[int], n: int, beta_range=(-20.0, 200.0)) -> Optional[PowerLawFit]:
    """Slope with a 95% profile-likelihood interval; the slope is unbounded
    when only the widest window records events."""
    w = np.asarray(widths, dtype=float)
    k = np.asarray(successes, dtype=float)
    keep = w > 0
    w, k = w[keep], k[keep]
    if w.size < 2 or k.sum() == 0:
        return None
    u = w / w.max()
    top = u == 1.0
    lo_b, hi_b = beta_range
    prof = lambda b: _profile_loglik(b, u, k, n)  # noqa: E731
    unbounded = bool(np.all(k[~top] == 0))
    if unbounded:
        p_top = np.where(top, k.sum() / (n * top.sum()), 0.0)
        lmax = _binomial_loglik(p_top, k, n)
        beta_hat = math.inf
    else:
        grid = np.linspace(lo_b, hi_b, 445)
        vals = np.array([prof(b) for b in grid])
        i = int(np.argmax(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = optimize.minimize_scalar(lambda x: -prof(x), bounds=(a, b), method="bounded", options={"xatol": 1e-8})
        beta_hat, lmax = float(res.x), -float(res.fun)
    excess = lambda b: 2.0 * (lmax - prof(b)) - CHI2_95  # noqa: E731
    start = beta_hat if not unbounded else hi_b
    if unbounded:
        # walk down from the top of the range to the first beta inside the region
        while excess(start) > 0 and start > lo_b:
            start -= 1.0
    ci_low = -math.inf if excess(lo_b) <= 0 else optimize.brentq(excess, lo_b, start, xtol=1e-8)
    if unbounded or excess(hi_b) <= 0:
        ci_high = math.inf
    else:
        ci_high = optimize.brentq(excess, beta_hat, hi_b, xtol=1e-8)
    return PowerLawFit(float(beta_hat), float(ci_low), float(ci_high), unbounded)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _json_value(x):
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_json_value(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


@dataclass
class EstimateReport:
    quantity: str
    params: dict
    grid: list
    estimate: list
    ci_low: list
    ci_high: list
    n_trials: int
    seed: int
    slope: Optional[float] = None
    extra: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (len(self.grid) == len(self.estimate) == len(self.ci_low) == len(self.ci_high)):
            raise ValueError("grid and estimate columns must align")
        for lo, hi in zip(self.ci_low, self.ci_high):
            if lo > hi:
                raise ValueError("confidence bounds out of order")

    def to_dict(self) -> dict:
        out = {
            "quantity": self.quantity,
            "params": self.params,
            "grid": self.grid,
            "estimate": self.estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "slope": self.slope,
            "n_trials": self.n_trials,
            "seed": self.seed,
        }
        if self.extra:
            out["extra"] = self.extra
        if self.series:
            out["series"] = self.series
        return _json_value(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["grid", "estimate", "ci_low", "ci_high"]
        names = sorted(self.series)
        for name in names:
            cols += [f"{name}_{c}" for c in ("estimate", "ci_low", "ci_high")]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for i, g in enumerate(self.grid):
            row = [g, self.estimate[i], self.ci_low[i], self.ci_high[i]]
            for name in names:
                s = self.series[name]
                row += [s["estimate"][i], s["ci_low"][i], s["ci_high"][i]]
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _binomial_columns(events: np.ndarray, n: int) -> dict:
    k = np.asarray(events, dtype=int)
    lo, hi = wilson_interval(k, n)
    return {"events": k.tolist(), "estimate": (k / n).tolist(), "ci_low": lo.tolist(), "ci_high": hi.tolist()}


def _base_params(ensemble: TrialEnsemble, **kw) -> dict:
    return {**ensemble.metadata(), **kw}


def _require_grid(grid) -> list[float]:
    grid = [float(x) for x in grid]
    if not grid:
        raise ValueError("parameter grid is empty")
    if any(x < 0 for x in grid):
        raise ValueError("grid values must be nonnegative")
    return grid


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------


def wegner_curve(ensemble: TrialEnsemble, center: float, widths: Sequence[float]) -> EstimateReport:
    """P{count >= 1} and E{count} on windows centered at ``center``.

    The primary columns hold the mean count; the probability is the series
    ``p_at_least_one``. The slope is the least-squares log-log slope of the mean.
    """
    if ensemble.n_trials < 100:
        raise ValueError("Wegner estimates need at least 100 trials")
    widths = _require_grid(widths)
    N = ensemble.n_trials
    means, lows, highs, hits = [], [], [], []
    for w in widths:
        c = ensemble.counts(IntervalSet.centered(center, w))
        m, lo, hi = mean_interval(c)
        means.append(m)
        lows.append(min(lo, m))
        highs.append(max(hi, m))
        hits.append(int(np.count_nonzero(c >= 1)))
    return EstimateReport(
        quantity="wegner_mean_count",
        params=_base_params(ensemble, center=center),
        grid=widths,
        estimate=means,
        ci_low=lows,
        ci_high=highs,
        n_trials=N,
        seed=ensemble.master_seed,
        slope=loglog_slope(widths, means),
        series={"p_at_least_one": _binomial_columns(np.array(hits), N)},
    )


def generalized_minami_curve(ensemble: TrialEnsemble, center: float, widths: Sequence[float], threshold: Optional[int] = None) -> EstimateReport:
    """P{count >= m+1} (m = r^d unless ``threshold`` is given) vs window width.

    ``slope`` is the binomial maximum-likelihood power-law exponent; ``extra``
    carries its 95% profile interval and the least-squares slope when every
    estimate is positive.
    """
    widths = _require_grid(widths)
    k = ensemble.geometry.rank + 1 if threshold is None else int(threshold)
    N = ensemble.n_trials
    events = np.array([np.count_nonzero(ensemble.counts(IntervalSet.centered(center, w)) >= k) for w in widths])
    cols = _binomial_columns(events, N)
    fit = power_law_fit(widths, events, N)
    extra = {
        "threshold": k,
        "slope_ci": [fit.ci_low, fit.ci_high] if fit else [None, None],
        "slope_unbounded": bool(fit.unbounded) if fit else False,
        "ols_slope": loglog_slope(widths, cols["estimate"]),
        "events": cols["events"],
        "expected_events_at_widest": int(events[int(np.argmax(widths))]),
    }
    return EstimateReport(
        quantity="generalized_minami",
        params=_base_params(ensemble, center=center),
        grid=widths,
        estimate=cols["estimate"],
        ci_low=cols["ci_low"],
        ci_high=cols["ci_high"],
        n_trials=N,
        seed=ensemble.master_seed,
        slope=fit.slope if fit else None,
        extra=extra,
    )


def weak_minami_curve(ensemble: TrialEnsemble, E: float, deltas: Sequence[float], anchor: str = "outer") -> EstimateReport:
    """P{count_in(I) >= 2} for width-delta windows I inside I_E.

    Primary columns use the lower edge; the upper edge is the ``upper`` series.
    """
    g = ensemble.geometry
    window = BandEdgeWindow(E, g.d, g.r)
    deltas = _require_grid(deltas)
    N = ensemble.n_trials
    lower = np.array([np.count_nonzero(ensemble.counts(window.edge_window(dl, "lower", anchor)) >= 2) for dl in deltas])
    upper = np.array([np.count_nonzero(ensemble.counts(window.edge_window(dl, "upper", anchor)) >= 2) for dl in deltas])
    cols = _binomial_columns(lower, N)
    up = _binomial_columns(upper, N)
    order = np.argsort(deltas)[::-1]
    # halving delta should not raise the estimate beyond the confidence bands
    monotone = all(
        cols["ci_low"][order[i + 1]] <= cols["ci_high"][order[i]] for i in range(len(order) - 1)
    )
    return EstimateReport(
        quantity="weak_minami",
        params=_base_params(ensemble, E=E, anchor=anchor),
        grid=deltas,
        estimate=cols["estimate"],
        ci_low=cols["ci_low"],
        ci_high=cols["ci_high"],
        n_trials=N,
        seed=ensemble.master_seed,
        extra={"monotone_within_ci": monotone, "events": cols["events"]},
        series={"upper": up},
    )


def evls_tail_curve(ensemble: TrialEnsemble, E: float, deltas: Sequence[float]) -> EstimateReport:
    """P{spac over I_E < delta} per delta.

    ``extra['inclusion_violations']`` counts trials where some width-delta
    window inside I_E (outer and inner anchors, both edges) holds two
    eigenvalues while spac >= delta; the implication makes this zero.
    """
    g = ensemble.geometry
    window = BandEdgeWindow(E, g.d, g.r)
    deltas = _require_grid(deltas)
    N = ensemble.n_trials
    spacs = ensemble.spacs(window.intervals)
    events = np.array([np.count_nonzero(spacs < dl) for dl in deltas])
    cols = _binomial_columns(events, N)
    violations = 0
    for dl in deltas:
        if dl > E:
            continue
        for edge in ("lower", "upper"):
            for anchor in ("outer", "inner"):
                two = ensemble.counts(window.edge_window(dl, edge, anchor)) >= 2
                violations += int(np.count_nonzero(two & ~(spacs < dl)))
    order = np.argsort(deltas)
    nonincreasing_point = all(events[order[i]] <= events[order[i + 1]] for i in range(len(order) - 1))
    ci_ordered = all(cols["ci_low"][order[i]] <= cols["ci_high"][order[i + 1]] for i in range(len(order) - 1))
    log_abs = [abs(math.log(dl)) if 0 < dl < 1 else None for dl in deltas]
    return EstimateReport(
        quantity="evls_tail",
        params=_base_params(ensemble, E=E),
        grid=deltas,
        estimate=cols["estimate"],
        ci_low=cols["ci_low"],
        ci_high=cols["ci_high"],
        n_trials=N,
        seed=ensemble.master_seed,
        extra={
            "events": cols["events"],
            "inclusion_violations": violations,
            "nonincreasing_as_delta_shrinks": bool(nonincreasing_point),
            "ci_ordered": bool(ci_ordered),
            "abs_log_delta": log_abs,
        },
    )


def dos_estimate(ensemble: TrialEnsemble, energies: Sequence[float], h: float) -> EstimateReport:
    """n(E) ~ E{count_in([E-h, E+h])} / (L^d 2h) with standard-error bands."""
    if h <= 0:
        raise ValueError("half-width h must be positive")
    energies = [float(e) for e in energies]
    if not energies:
        raise ValueError("energy grid is empty")
    scale = ensemble.geometry.n_sites * 2.0 * h
    est, lo, hi = [], [], []
    for e in energies:
        m, a, b = mean_interval(ensemble.counts(IntervalSet.single(e - h, e + h)))
        est.append(m / scale)
        lo.append(min(a, m) / scale)
        hi.append(max(b, m) / scale)
    return EstimateReport(
        quantity="density_of_states",
        params=_base_params(ensemble, h=h),
        grid=energies,
        estimate=est,
        ci_low=lo,
        ci_high=hi,
        n_trials=ensemble.n_trials,
        seed=ensemble.master_seed,
    )


def cartan_measure_check(
    base: Configuration,
    eps: float,
    intervals: IntervalSet,
    deltas: Sequence[float],
    n_samples: int,
    master_seed: int,
    bc: BoundaryCondition | str = BoundaryCondition.SIMPLE,
    label: str = "cartan",
    threads: int = 1,
) -> EstimateReport:
    """Normalized measure of {s in (-eps, eps)^N : spac_I(H_{omega0 + s}) < delta}."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = base.values
    if np.any(v - eps < 0) or np.any(v + eps > 1):
        raise ValueError("omega0 + (-eps, eps)^N leaves [0, 1]^N")
    rep = cluster_report(eigensolve(hamiltonian(base, bc)), intervals)
    if rep.n == 0 or not rep.gap_to_rest > 0:
        raise ValueError("no isolated cluster in the interval set at omega0")
    deltas = _require_grid(deltas)
    g = base.geometry
    bc = BoundaryCondition.parse(bc)
    H0 = laplacian(g, bc)
    spacs = np.empty(n_samples)
    uniform = Density.uniform()

    step = chunk_size(g.n_sites)

    def work(start: int) -> None:
        stop = min(start + step, n_samples)
        u = sample_block_values(g, uniform, master_seed, label, range(start, stop))
        ev = solve_batch(H0, g.site_blocks, v + eps * (2.0 * u - 1.0))
        spacs[start:stop] = TrialEnsemble(g, uniform, bc, master_seed, label, ev).spacs(intervals)

    starts = range(0, n_samples, step)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    events = np.array([np.count_nonzero(spacs < dl) for dl in deltas])
    cols = _binomial_columns(events, n_samples)
    return EstimateReport(
        quantity="cartan_measure",
        params={"d": g.d, "L": g.L, "r": g.r, "bc": bc.value, "eps": eps, "intervals": intervals.to_list(), "cluster_size": rep.n},
        grid=deltas,
        estimate=cols["estimate"],
        ci_low=cols["ci_low"],
        ci_high=cols["ci_high"],
        n_trials=n_samples,
        seed=master_seed,
        extra={"events": cols["events"], "abs_log_delta": [abs(math.log(dl)) if 0 < dl < 1 else None for dl in deltas]},
    )


def nesting_holds(ensemble: TrialEnsemble, intervals: IntervalSet) -> bool:
    """P{count >= m+1} <= P{count >= 1} on the same trials, exactly."""
    c = ensemble.counts(intervals)
    return int(np.count_nonzero(c >= ensemble.geometry.rank + 1)) <= int(np.count_nonzero(c >= 1))


__all__ = [
    "BandEdgeWindow",
    "EstimateReport",
    "PowerLawFit",
    "TrialEnsemble",
    "WindowError",
    "cartan_measure_check",
    "dos_estimate",
    "evls_tail_curve",
    "gamma_L2r",
    "gamma_Lnr",
    "gamma_inf",
    "generalized_minami_curve",
    "loglog_slope",
    "mean_interval",
    "nesting_holds",
    "power_law_fit",
    "run_ensemble",
    "wegner_curve",
    "weak_minami_curve",
    "wilson_interval",
]
