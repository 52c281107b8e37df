"""Constructive splitting of degenerate band-edge clusters.

Starting from a configuration whose Hamiltonian has an isolated cluster of n
eigenvalues near a band edge, search the eps-cube around it in stages of
geometrically shrinking radius until every consecutive gap in the cluster
exceeds 8 eps L^{-(n-1)(2d+1)}. Results come back as certificates that are
re-verified by a fresh diagonalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from hirank.estimators import gamma_inf, gamma_L2r
from hirank.lattice import LatticeGeometry
from hirank.operators import (
    BoundaryCondition,
    Configuration,
    block_direct_sum_laplacian,
    hamiltonian,
    neumann_second_eigenvalue_gap,
)
from hirank.randomness import Density, SeedSpec, sample_configuration
from hirank.spectral import ClusterReport, IntervalSet, block_weights, cluster_report, eigensolve

DEFAULT_BUDGET = 500


class HypothesisViolation(ValueError):
    """A splitting problem failed one or more of its hypotheses."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class SplittingProblem:
    omega0: Configuration
    intervals: IntervalSet
    eps: float
    bc: BoundaryCondition = BoundaryCondition.SIMPLE
    edge_mode: str = "asymptotic"  # edge constant: "asymptotic" = gamma_inf, "finite" = gamma_{L,2,r}

    @property
    def geometry(self) -> LatticeGeometry:
        return self.omega0.geometry

    @property
    def edge_constant(self) -> float:
        g = self.geometry
        if self.edge_mode == "asymptotic":
            return gamma_inf(g.r)
        if self.edge_mode == "finite":
            return gamma_L2r(g.L, g.r, g.d)
        raise ValueError(f"unknown edge mode {self.edge_mode!r}")

    @property
    def decay(self) -> float:
        """q = L^{-(2d+1)}, the per-stage radius ratio."""
        g = self.geometry
        return float(g.L) ** (-(2 * g.d + 1))

    def target_spacing(self, n: int) -> float:
        return 8.0 * self.eps * self.decay ** (n - 1)

    def to_dict(self) -> dict:
        g = self.geometry
        return {
            "d": g.d,
            "L": g.L,
            "r": g.r,
            "omega0": self.omega0.values.tolist(),
            "intervals": self.intervals.to_list(),
            "eps": self.eps,
            "bc": BoundaryCondition.parse(self.bc).value,
            "edge_mode": self.edge_mode,
        }


@dataclass
class SplittingCertificate:
    omega_hat: Configuration
    n: int
    achieved_spacing: float
    target_spacing: float
    sup_distance: float
    iterations: int
    success: bool
    stages: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        def num(x):
            return float(x) if math.isfinite(x) else None

        return {
            "omega_hat": self.omega_hat.values.tolist(),
            "n": self.n,
            "achieved_spacing": num(self.achieved_spacing),
            "target_spacing": num(self.target_spacing),
            "sup_distance": self.sup_distance,
            "iterations": self.iterations,
            "success": self.success,
            "stages": self.stages,
            "message": self.message,
        }


def validate_problem(problem: SplittingProblem) -> ClusterReport:
    """Diagonalize H at omega0 and check every hypothesis; raise listing all failures."""
    violations = []
    g = problem.geometry
    eps, I = problem.eps, problem.intervals
    if not 0.0 < eps < 1.0 / 12.0:
        violations.append("eps must lie in (0, 1/12)")
    if not I.length < 0.5:
        violations.append("|I| must be < 1/2")
    v = problem.omega0.values
    if np.any(v - eps < 0.0) or np.any(v + eps > 1.0):
        violations.append("omega0 + [-eps, eps]^N leaves [0, 1]^N")
    gam = problem.edge_constant
    top = 4.0 * g.d + 1.0
    if gam <= 0:
        violations.append(f"band-edge hypothesis violated: edge constant {gam:.6g} <= 0, no band-edge window exists")
    else:
        edges = IntervalSet(((0.0, gam), (top - gam, top))) if 2 * gam < top else IntervalSet.single(0.0, top)
        if not I.is_subset_of(edges):
            violations.append("band-edge hypothesis violated: I is not inside the band-edge window")
    report = cluster_report(eigensolve(hamiltonian(problem.omega0, problem.bc)), I)
    if report.n == 0:
        violations.append("empty cluster")
    elif not report.gap_to_rest >= 8.0 * eps:
        violations.append(f"isolation hypothesis violated: dist(I, rest) = {report.gap_to_rest:.6g} < 8 eps")
    if violations:
        raise HypothesisViolation(violations)
    return report


def stage_radii(eps: float, L: int, d: int, n: int) -> list[float]:
    """Box radii eps_j (1 - q) for the n-1 stages, eps_{j+1} = eps_j q, q = L^{-(2d+1)}."""
    q = float(L) ** (-(2 * d + 1))
    levels = [eps * q**j for j in range(max(n, 1))]
    # telescoping differences keep the exact sum at eps - eps_{n-1} < eps
    return [a - b for a, b in zip(levels, levels[1:])]


def _cluster(problem: SplittingProblem, values: np.ndarray, n: int, want_vectors: bool = False):
    """The n eigenvalues nearest the cluster location (those in I widened by eps)."""
    conf = Configuration(problem.geometry, values)
    spec = eigensolve(hamiltonian(conf, problem.bc), want_vectors=want_vectors)
    wide = problem.intervals.widen(problem.eps)
    mask = wide.contains(spec.eigenvalues)
    idx = np.flatnonzero(mask)
    vecs = spec.eigenvectors[:, idx] if want_vectors else None
    return spec.eigenvalues, idx, vecs, conf


def _gaps(ev: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.diff(ev[idx])


def verify_certificate(problem: SplittingProblem, cert: SplittingCertificate) -> list[str]:
    """Re-check a certificate from scratch; returns the failed conditions (empty when sound)."""
    failures = []
    ev = eigensolve(hamiltonian(cert.omega_hat, problem.bc)).eigenvalues
    wide = problem.intervals.widen(problem.eps)
    inside = wide.contains(ev)
    n = int(np.count_nonzero(inside))
    if n != cert.n:
        failures.append(f"cluster count {n} != {cert.n}")
    target = problem.target_spacing(cert.n)
    gaps = np.diff(ev[inside])
    spacing = float(np.min(gaps)) if gaps.size else math.inf
    if not spacing > target:
        failures.append(f"spacing {spacing:.6g} <= target {target:.6g}")
    dist = float(np.max(np.abs(cert.omega_hat.values - problem.omega0.values)))
    if not dist <= problem.eps:
        failures.append(f"sup distance {dist:.6g} > eps")
    outside = ev[~inside]
    if outside.size and not float(np.min(wide.distance(outside))) > 0:
        failures.append("cluster not isolated from the rest of the spectrum")
    return failures


def _objective(gaps: np.ndarray, rank: int) -> float:
    """(rank+1)-th largest consecutive gap; the stage raises it above its threshold."""
    if gaps.size == 0:
        return math.inf
    s = np.sort(gaps)[::-1]
    return float(s[min(rank, s.size - 1)])


def split_cluster(problem: SplittingProblem, budget: int = DEFAULT_BUDGET, seed: int = 0) -> SplittingCertificate:
    """Stagewise search for a configuration with a fully split cluster.

    Stage j moves inside the box of radius eps_j (1 - q) around its start and
    must push one more consecutive gap above 10 eps_{j+1}; later stages move
    eigenvalues by at most eps_{j+1} in total, so such a gap stays above
    8 eps_{j+1}, and the total displacement stays below eps. Candidates are
    Feynman-Hellmann ascent steps on the targeted gap and uniform restarts in
    the stage box; ``budget`` caps objective evaluations per stage.
    """
    report = validate_problem(problem)
    n = report.n
    g = problem.geometry
    omega0 = problem.omega0.values.copy()
    target = problem.target_spacing(n)
    if n == 1:
        return SplittingCertificate(problem.omega0, 1, math.inf, target, 0.0, 0, True, message="single eigenvalue")

    rng = SeedSpec(seed, 0, "split").generator()
    q = problem.decay
    radii = stage_radii(problem.eps, g.L, g.d, n)
    center = omega0
    iterations = 0
    stages = []

    def evaluate(x: np.ndarray):
        ev, idx, _, _ = _cluster(problem, x, n)
        return (_gaps(ev, idx) if idx.size == n else None), idx.size

    def finish(x: np.ndarray, ok: bool, message: str) -> SplittingCertificate:
        ev, idx, _, conf = _cluster(problem, x, n)
        gaps = _gaps(ev, idx)
        spacing = float(np.min(gaps)) if gaps.size else math.inf
        cert = SplittingCertificate(
            omega_hat=conf,
            n=n,
            achieved_spacing=spacing,
            target_spacing=target,
            sup_distance=float(np.max(np.abs(x - omega0))),
            iterations=iterations,
            success=ok,
            stages=stages,
            message=message,
        )
        if ok:
            failures = verify_certificate(problem, cert)
            if failures:
                cert.success = False
                cert.message = "re-verification failed: " + "; ".join(failures)
        return cert

    gaps0, _ = evaluate(center)
    if gaps0 is not None and np.min(gaps0) > target:
        return finish(center, True, "already split")

    for j, rho in enumerate(radii):
        threshold = 10.0 * problem.eps * q ** (j + 1)
        lo, hi = center - rho, center + rho
        best_x = center
        gaps, _ = evaluate(center)
        best_obj = _objective(gaps, j) if gaps is not None else -math.inf
        best_disp = 0.0
        evals = 0

        def consider(x: np.ndarray) -> None:
            nonlocal best_x, best_obj, best_disp, evals, iterations
            evals += 1
            iterations += 1
            gaps, size = evaluate(x)
            if gaps is None:
                return
            obj = _objective(gaps, j)
            disp = float(np.max(np.abs(x - center)))
            if obj > best_obj or (obj == best_obj and disp < best_disp):
                best_x, best_obj, best_disp = x, obj, disp

        while best_obj <= threshold and evals < budget:
            # ascent on the smallest gap not yet above threshold
            ev, idx, vecs, conf = _cluster(problem, best_x, n, want_vectors=True)
            if idx.size == n:
                gaps = _gaps(ev, idx)
                order = np.argsort(gaps)
                i = int(order[n - 2 - j]) if n - 2 - j >= 0 else int(order[0])
                W = block_weights(conf, vecs)
                grad = W[:, i + 1] - W[:, i]
                if np.any(grad != 0):
                    step = rho * float(rng.uniform(0.05, 1.0))
                    consider(np.clip(best_x + step * np.sign(grad), lo, hi))
            if best_obj > threshold or evals >= budget:
                break
            consider(rng.uniform(lo, hi))
        stages.append(
            {
                "stage": j,
                "radius": rho,
                "threshold": threshold,
                "objective": best_obj if math.isfinite(best_obj) else None,
                "evaluations": evals,
            }
        )
        center = best_x
        gaps, _ = evaluate(center)
        if gaps is not None and np.min(gaps) > target:
            return finish(center, True, "split")
        if best_obj <= threshold:
            return finish(center, False, f"budget exhausted in stage {j}")
    return finish(center, False, "stages completed without certifying the target")


# ---------------------------------------------------------------------------
# Supporting numerical checks
# ---------------------------------------------------------------------------


def _projection_terms(conf: Configuration, intervals: IntervalSet, bc):
    spec = eigensolve(hamiltonian(conf, bc), want_vectors=True)
    mask = intervals.contains(spec.eigenvalues)
    return spec.eigenvalues[mask], spec.eigenvectors[:, mask]


def dn_trace_sandwich(conf: Configuration, intervals: IntervalSet, bc=BoundaryCondition.SIMPLE, rtol: float = 1e-8) -> dict:
    """sum_k tr P D^N_k <= tr P H <= sum_k tr P D^D_k + ||V|| tr P for the cluster projection P."""
    _, V = _projection_terms(conf, intervals, bc)
    g = conf.geometry
    trP = V.shape[1]
    lower = float(np.trace(V.T @ block_direct_sum_laplacian(g, "neumann") @ V))
    middle = float(np.trace(V.T @ hamiltonian(conf, bc) @ V))
    upper = float(np.trace(V.T @ block_direct_sum_laplacian(g, "dirichlet") @ V)) + float(np.max(np.abs(conf.values))) * trP
    tol = rtol * max(1.0, abs(lower), abs(middle), abs(upper))
    return {
        "lower": lower,
        "middle": middle,
        "upper": upper,
        "trace_P": trP,
        "holds": bool(lower <= middle + tol and middle <= upper + tol),
    }


def mean_location_terms(conf: Configuration, intervals: IntervalSet, bc=BoundaryCondition.SIMPLE) -> dict:
    """Cluster mean with the two-sided bound built from gamma_r and block norms ||P chi_k P||."""
    g = conf.geometry
    ev, V = _projection_terms(conf, intervals, bc)
    n = V.shape[1]
    if n == 0:
        raise ValueError("no eigenvalue in the interval set")
    gam = neumann_second_eigenvalue_gap(g.r)
    norms = np.empty(g.n_blocks)
    for k in range(g.n_blocks):
        rows = V[g.site_blocks == k]
        # ||P chi_k P|| = largest eigenvalue of the n x n Gram matrix of chi_k V
        norms[k] = np.linalg.eigvalsh(rows.T @ rows)[-1]
    s = float(norms.sum())
    mean = float(np.mean(ev))
    return {
        "mean": mean,
        "lower": gam - gam / n * s,
        "upper": 1.0 + 4.0 * g.d - gam + gam / n * s,
        "sum_norms": s,
        "n": n,
    }


def mean_location_bound_check(problem: SplittingProblem, samples: int, seed: int = 0) -> dict:
    """Evaluate the mean-location bound at omega0 and at uniform samples of the eps-cube."""
    validate_problem(problem)
    wide = problem.intervals.widen(problem.eps)
    g = problem.geometry
    points = [problem.omega0]
    for t in range(samples):
        u = sample_configuration(g, Density.uniform(), SeedSpec(seed, t, "mean-location")).values
        points.append(Configuration(g, problem.omega0.values + problem.eps * (2.0 * u - 1.0)))
    worst = math.inf
    violations = 0
    sandwich_violations = 0
    for conf in points:
        t = mean_location_terms(conf, wide, problem.bc)
        slack = min(t["mean"] - t["lower"], t["upper"] - t["mean"])
        worst = min(worst, slack)
        violations += slack < 0
        sandwich_violations += not dn_trace_sandwich(conf, wide, problem.bc)["holds"]
    return {
        "samples": len(points),
        "violations": int(violations),
        "worst_slack": worst,
        "sandwich_violations": int(sandwich_violations),
    }


# ---------------------------------------------------------------------------
# Degenerate instances
# ---------------------------------------------------------------------------


def symmetric_orbits(geometry: LatticeGeometry) -> np.ndarray:
    """Orbit label of each block under the symmetry group of the square block grid (d=2)."""
    if geometry.d != 2:
        raise ValueError("symmetric instances need d = 2")
    b = geometry.blocks_per_side
    c = np.stack(np.unravel_index(np.arange(geometry.n_blocks), (b, b)), axis=1)
    folded = np.minimum(c, b - 1 - c)
    folded.sort(axis=1)
    keys = [tuple(row) for row in folded]
    labels = {k: i for i, k in enumerate(sorted(set(keys)))}
    return np.array([labels[k] for k in keys])


def degenerate_pairs(ev: np.ndarray, tol: float = 1e-9) -> list[int]:
    """Indices i with ev[i+1] - ev[i] <= tol."""
    return [i for i in range(len(ev) - 1) if ev[i + 1] - ev[i] <= tol]


def degenerate_instance(
    seed: int,
    eps: float = 0.05,
    L: int = 8,
    r: int = 2,
    half_width: float = 0.01,
    edge: str = "lower",
    max_tries: int = 10_000,
) -> SplittingProblem:
    """Random d=2 problem with an exactly degenerate pair, by symmetric block couplings.

    Couplings constant on the orbits of the block grid's symmetry group keep
    the two-dimensional irreducible pairs of H degenerate; draws are rejected
    until such a pair sits in the band-edge window with isolation >= 8 eps.
    """
    g = LatticeGeometry(2, L, r)
    orbits = symmetric_orbits(g)
    n_orbits = int(orbits.max()) + 1
    gam = gamma_inf(r)
    top = 4.0 * g.d + 1.0
    rng = SeedSpec(seed, 0, "degenerate-instance").generator()
    for _ in range(max_tries):
        params = rng.uniform(eps, 1.0 - eps, n_orbits)
        conf = Configuration(g, params[orbits])
        ev = eigensolve(hamiltonian(conf)).eigenvalues
        for i in degenerate_pairs(ev):
            c = 0.5 * (ev[i] + ev[i + 1])
            lo, hi = (0.0, gam) if edge == "lower" else (top - gam, top)
            if not (lo <= c - half_width and c + half_width <= hi):
                continue
            below = c - ev[i - 1] if i > 0 else math.inf
            above = ev[i + 2] - c if i + 2 < len(ev) else math.inf
            if min(below, above) - half_width >= 8.0 * eps:
                return SplittingProblem(conf, IntervalSet.single(c - half_width, c + half_width), eps)
    raise RuntimeError("no admissible degenerate instance found")


__all__ = [
    "DEFAULT_BUDGET",
    "HypothesisViolation",
    "SplittingCertificate",
    "SplittingProblem",
    "degenerate_instance",
    "degenerate_pairs",
    "dn_trace_sandwich",
    "mean_location_bound_check",
    "mean_location_terms",
    "split_cluster",
    "stage_radii",
    "symmetric_orbits",
    "validate_problem",
    "verify_certificate",
]
