"""Command-line front end: ``hirank <command> [options]``.

Every run is a pure function of its RunConfig. Reports are written as
``<out>.json`` (with the config and a schema version embedded) plus CSV for
bulk numbers. The thread count and output path are execution details and are
left out of the embedded config, so outputs are byte-identical across them.

Exit codes: 0 ok, 2 validation error, 3 oracle or invariant violation,
4 splitting budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from hirank import estimators, les, splitting
from hirank.lattice import LatticeGeometry
from hirank.operators import BoundaryCondition, Configuration, analytic_bc_spectrum, hamiltonian
from hirank.randomness import Density, SeedSpec, sample_configuration
from hirank.spectral import IntervalSet, eigensolve

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_INVARIANT, EXIT_BUDGET = 0, 2, 3, 4
EXECUTION_KEYS = ("threads", "out", "config")


class InvariantViolation(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str
    d: int = 1
    L: int = 16
    r: int = 2
    bc: str = "simple"
    density: str = "uniform"
    tilt: float = 0.0
    seed: int = 0
    trials: int = 1000
    params: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        common = {k: getattr(args, k) for k in ("d", "L", "r", "bc", "density", "tilt", "seed", "trials")}
        skip = set(common) | set(EXECUTION_KEYS) | {"command", "handler"}
        params = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
        return cls(command=args.command, params=params, **common)

    def geometry(self) -> LatticeGeometry:
        return LatticeGeometry(self.d, self.L, self.r)

    def make_density(self) -> Density:
        if self.density == "uniform":
            if self.tilt:
                raise ValueError("--tilt requires --density tilt")
            return Density.uniform()
        if self.density == "tilt":
            return Density.tilt(self.tilt)
        raise ValueError(f"unknown density {self.density!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def _write_json(path: Path, config: RunConfig, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "config": config.to_dict(), **payload}
    path.write_text(json.dumps(_clean(doc), indent=2) + "\n")


def _csv_header(config: RunConfig) -> str:
    return f"# schema_version={SCHEMA_VERSION} config={json.dumps(_clean(config.to_dict()), sort_keys=True)}\n"


def _write_csv(path: Path, config: RunConfig, body: str) -> None:
    path.write_text(_csv_header(config) + body)


def _outputs(args) -> tuple[Path, Path]:
    prefix = Path(args.out if args.out else f"hirank_{args.command}")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    return prefix.with_suffix(".json"), prefix.with_suffix(".csv")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _windows(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        try:
            a, b = part.split(":")
            out.append((float(a), float(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"windows are a:b pairs separated by commas, got {part!r}")
    return out


def _ensemble(config: RunConfig, args) -> estimators.TrialEnsemble:
    return estimators.run_ensemble(
        config.geometry(), config.make_density(), config.trials, config.seed, config.bc, threads=args.threads
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_spectrum(config: RunConfig, args) -> int:
    g = config.geometry()
    if args.omega == "zero":
        conf = Configuration.constant(g, 0.0)
    elif args.omega == "random":
        conf = sample_configuration(g, config.make_density(), SeedSpec(config.seed, 0, "spectrum"))
    else:
        conf = Configuration(g, _floats(args.omega))
    spec = eigensolve(hamiltonian(conf, config.bc))
    payload = {"eigenvalues": spec.eigenvalues, "omega": conf.values}
    verdict = f"{len(spec)} eigenvalues"
    status = EXIT_OK
    if args.check_analytic:
        bc = BoundaryCondition.parse(config.bc)
        if bc is BoundaryCondition.SIMPLE or args.omega != "zero":
            raise ValueError("--check-analytic needs --bc dirichlet or neumann and --omega zero")
        dev = float(np.max(np.abs(spec.eigenvalues - analytic_bc_spectrum(g, bc))))
        payload["analytic_max_deviation"] = dev
        verdict += f"; max deviation from analytic spectrum {dev:.3e}"
        if not dev <= 1e-10:
            status = EXIT_INVARIANT
    json_path, csv_path = _outputs(args)
    _write_json(json_path, config, payload)
    _write_csv(csv_path, config, spec.to_csv())
    print(verdict)
    print(f"wrote {json_path} {csv_path}")
    return status


def _report_outputs(config: RunConfig, args, report: estimators.EstimateReport, verdict: str) -> None:
    json_path, csv_path = _outputs(args)
    _write_json(json_path, config, {"report": report.to_dict()})
    _write_csv(csv_path, config, report.to_csv())
    print(verdict)
    print(f"wrote {json_path} {csv_path}")


def _fmt(x) -> str:
    return "n/a" if x is None else (f"{x:.4g}" if math.isfinite(x) else str(x))


def cmd_wegner(config: RunConfig, args) -> int:
    rep = estimators.wegner_curve(_ensemble(config, args), args.center, args.widths)
    _report_outputs(config, args, rep, f"wegner: log-log slope of mean count vs |I| = {_fmt(rep.slope)}")
    return EXIT_OK


def cmd_minami(config: RunConfig, args) -> int:
    rep = estimators.generalized_minami_curve(_ensemble(config, args), args.center, args.widths, args.threshold)
    lo, hi = rep.extra["slope_ci"]
    _report_outputs(
        config,
        args,
        rep,
        f"minami: P(count >= {rep.extra['threshold']}) slope = {_fmt(rep.slope)} (95% CI {_fmt(lo)}, {_fmt(hi)})",
    )
    return EXIT_OK


def cmd_evls(config: RunConfig, args) -> int:
    rep = estimators.evls_tail_curve(_ensemble(config, args), args.E, args.deltas)
    viol = rep.extra["inclusion_violations"]
    _report_outputs(
        config,
        args,
        rep,
        f"evls: nonincreasing as delta shrinks = {rep.extra['nonincreasing_as_delta_shrinks']}, inclusion violations = {viol}",
    )
    if viol:
        raise InvariantViolation(f"{viol} inclusion violations")
    return EXIT_OK


def cmd_weakminami(config: RunConfig, args) -> int:
    rep = estimators.weak_minami_curve(_ensemble(config, args), args.E, args.deltas, args.anchor)
    _report_outputs(config, args, rep, f"weak minami: monotone within CI = {rep.extra['monotone_within_ci']}")
    return EXIT_OK


def cmd_dos(config: RunConfig, args) -> int:
    rep = estimators.dos_estimate(_ensemble(config, args), args.energies, args.h)
    values = ", ".join(f"n({e:g}) = {v:.4g}" for e, v in zip(rep.grid, rep.estimate))
    _report_outputs(config, args, rep, f"dos: {values}")
    return EXIT_OK


def _load_problem(config: RunConfig, args) -> splitting.SplittingProblem:
    if args.factory:
        if args.factory != "degenerate-d2":
            raise ValueError(f"unknown factory {args.factory!r}")
        return splitting.degenerate_instance(
            args.instance_seed, eps=args.eps, L=config.L, r=config.r, half_width=args.half_width, edge=args.edge
        )
    if not args.omega_file:
        raise ValueError("split needs --factory or --omega-file")
    data = json.loads(Path(args.omega_file).read_text())
    g = config.geometry()
    return splitting.SplittingProblem(
        Configuration(g, data["omega0"]),
        IntervalSet(tuple(tuple(iv) for iv in data["intervals"])),
        float(data.get("eps", args.eps)),
        BoundaryCondition.parse(config.bc),
    )


def cmd_split(config: RunConfig, args) -> int:
    problem = _load_problem(config, args)
    cert = splitting.split_cluster(problem, budget=args.budget, seed=config.seed)
    failures = splitting.verify_certificate(problem, cert) if cert.success else []
    json_path, _ = _outputs(args)
    _write_json(json_path, config, {"problem": problem.to_dict(), "certificate": cert.to_dict(), "verification_failures": failures})
    if cert.success:
        print(
            f"split: SUCCESS n={cert.n} spacing {cert.achieved_spacing:.4g} > target {cert.target_spacing:.4g}, "
            f"|omega_hat - omega0|_inf = {cert.sup_distance:.4g} <= eps = {problem.eps}, iterations {cert.iterations}"
        )
    else:
        print(f"split: FAILED ({cert.message}) best spacing {cert.achieved_spacing:.4g}, target {cert.target_spacing:.4g}")
    print(f"wrote {json_path}")
    if failures or (not cert.success and "re-verification" in cert.message):
        return EXIT_INVARIANT
    return EXIT_OK if cert.success else EXIT_BUDGET


def cmd_les(config: RunConfig, args) -> int:
    json_path, csv_path = _outputs(args)
    if args.calibration:
        res = les.calibration(args.rate, args.windows, config.trials, args.reps, config.seed, args.alpha)
        _write_json(json_path, config, {"calibration": res})
        rows = "".join(
            f"{w['window'][0]!r},{w['window'][1]!r},{w['chi2_rejection_rate']!r},{w['ks_rejection_rate']!r}\n" for w in res["windows"]
        )
        _write_csv(csv_path, config, "a,b,chi2_rejection_rate,ks_rejection_rate\n" + rows)
        print(f"les calibration: passes = {res['passes']}, chi2 rejection rates {[w['chi2_rejection_rate'] for w in res['windows']]}")
        print(f"wrote {json_path} {csv_path}")
        return EXIT_OK
    g = config.geometry()
    if config.bc != "simple":
        raise ValueError("local statistics use Simple boundary conditions")
    ell = args.ell if args.ell else g.L
    ens = les.run_les_ensemble(g, config.make_density(), config.trials, config.seed, ell, threads=args.threads)
    reports = les.poisson_fit(ens, args.E, args.windows)
    hull = (min(a for a, _ in args.windows), max(b for _, b in args.windows))
    proximity = les.xi_zeta_proximity(ens, args.E, hull)
    payload = {"fits": [r.to_dict() for r in reports], "xi_zeta_proximity": proximity}
    _write_json(json_path, config, payload)
    lines = ["trial_id,point\n"]
    for t, pts in enumerate(ens.xi_points(args.E, hull)):
        lines.extend(f"{t},{p:.17g}\n" for p in pts)
    _write_csv(csv_path, config, "".join(lines))
    pv = ", ".join(f"|I|={r.window[1] - r.window[0]:g}: p={_fmt(r.p_value)}" for r in reports)
    print(f"les: chi-square {pv}; xi/zeta mean distance {proximity['mean']:.4g}")
    print(f"wrote {json_path} {csv_path}")
    if not all(r.extra["counting_identity"]["holds"] for r in reports):
        raise InvariantViolation("counting identity failed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HIRANK_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values; explicit flags override it")
    common.add_argument("--d", type=int, default=1)
    common.add_argument("--L", type=int, default=16)
    common.add_argument("--r", type=int, default=2)
    common.add_argument("--bc", choices=["simple", "dirichlet", "neumann"], default="simple")
    common.add_argument("--density", choices=["uniform", "tilt"], default="uniform")
    common.add_argument("--tilt", type=float, default=0.0, help="slope a of rho(x) = 1 + a(2x - 1)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=1000)
    common.add_argument("--threads", type=int, default=_default_threads(), help="thread-count hint (env HIRANK_THREADS)")
    common.add_argument("--out", help="output path prefix; .json and .csv are appended")

    parser = argparse.ArgumentParser(prog="hirank", description="Higher-rank Anderson model numerical laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = sub.choices

    p = sub.add_parser("spectrum", parents=[common], help="eigenvalues of one Hamiltonian")
    p.add_argument("--omega", default="zero", help="'zero', 'random', or comma-separated couplings")
    p.add_argument("--check-analytic", action="store_true")
    p.set_defaults(handler=cmd_spectrum)

    p = sub.add_parser("wegner", parents=[common], help="mean count and P(count >= 1) vs |I|")
    p.add_argument("--center", type=float, default=0.5)
    p.add_argument("--widths", type=_floats, default=[0.02, 0.04, 0.08])
    p.set_defaults(handler=cmd_wegner)

    p = sub.add_parser("minami", parents=[common], help="P(count >= m+1) vs |I|")
    p.add_argument("--center", type=float, default=0.5)
    p.add_argument("--widths", type=_floats, default=[0.05, 0.1, 0.2])
    p.add_argument("--threshold", type=int, default=None, help="count threshold, default r^d + 1")
    p.set_defaults(handler=cmd_minami)

    p = sub.add_parser("evls", parents=[common], help="P(spac over I_E < delta)")
    p.add_argument("--E", type=float, default=0.5)
    p.add_argument("--deltas", type=_floats, default=[1e-2, 1e-4, 1e-6])
    p.set_defaults(handler=cmd_evls)

    p = sub.add_parser("weakminami", parents=[common], help="P(count >= 2) in width-delta band-edge windows")
    p.add_argument("--E", type=float, default=0.5)
    p.add_argument("--deltas", type=_floats, default=[0.04, 0.02, 0.01])
    p.add_argument("--anchor", choices=["outer", "inner"], default="outer")
    p.set_defaults(handler=cmd_weakminami)

    p = sub.add_parser("dos", parents=[common], help="density of states estimate")
    p.add_argument("--energies", type=_floats, default=[0.5, 1.0, 2.0, 2.5])
    p.add_argument("--h", type=float, default=0.05)
    p.set_defaults(handler=cmd_dos)

    p = sub.add_parser("split", parents=[common], help="split a degenerate band-edge cluster")
    p.add_argument("--factory", choices=["degenerate-d2"])
    p.add_argument("--omega-file", help="JSON with omega0, intervals and optionally eps")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--half-width", type=float, default=0.01)
    p.add_argument("--edge", choices=["lower", "upper"], default="lower")
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=splitting.DEFAULT_BUDGET)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("les", parents=[common], help="local eigenvalue statistics and Poisson fit")
    p.add_argument("--E", type=float, default=0.5)
    p.add_argument("--ell", type=int, default=None, help="subcube side for zeta (default L)")
    p.add_argument("--windows", type=_windows, default=[(0.0, 1.0), (0.0, 2.0), (-2.0, 2.0)])
    p.add_argument("--calibration", action="store_true", help="run the fit on synthetic Poisson data")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(handler=cmd_les)
    return parser


def parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        data = json.loads(Path(args.config).read_text())
        data.pop("command", None)
        params = data.pop("params", {})
        data.update(params)
        # config values become defaults, so explicit flags still win
        sub = parser.commands[args.command]
        for key in data:
            if key.replace("-", "_") not in vars(args):
                parser.error(f"unknown config key {key!r}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in data.items()})
        args = parser.parse_args(argv)
        for key in ("widths", "deltas", "energies"):
            if isinstance(getattr(args, key, None), str):
                setattr(args, key, _floats(getattr(args, key)))
        if isinstance(getattr(args, "windows", None), list):
            args.windows = [tuple(w) for w in args.windows]
        elif isinstance(getattr(args, "windows", None), str):
            args.windows = _windows(args.windows)
    return args


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        config = RunConfig.from_args(args)
        config.geometry()
        config.make_density()
        if config.trials < 1:
            raise ValueError("--trials must be >= 1")
        return args.handler(config, args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except splitting.HypothesisViolation as exc:
        print("rejected:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
