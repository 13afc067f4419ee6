"""Command-line surface: rate, simulate, fit, check, stationary, fpe, psi.

Every command writes a run report (JSON) into the output directory with the
scenario name/hash, the master seed, the artifact version, the exact command
line, wall time, the list of files written, and a pass/fail summary.  Exit
codes: 0 pass, 1 a requested check failed, 2 usage error, 3 numerical
failure.  All numeric output carries 17 significant digits; rerunning the
printed command reproduces every CSV byte-for-byte.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, jsonio, tomlmini
from .certify import certify_scenario
from .decayfit import fit_exponential_rate
from .errors import FitError, MvContractError, ScenarioFormatError
from .experiments import estimate_stationary, run_decay_experiment, scenario_cost
from .fpe1d import FPSolver, problem_from_scenario, w1_particle_grid
from .model import check_cc1, check_decomposition, check_lyapunov
from .rates import puncture_mass
from .rng import aux_generator
from .scenarios import load_scenario
from .transport import phi_cost, plain_cost, weighted_cost

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _add_common(p: argparse.ArgumentParser, scenario_required: bool = True):
    p.add_argument("--scenario", required=scenario_required,
                   help="built-in name (ou, example21, granular, orderpreserving) or file path")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for record-time evaluations; never changes results")
    p.add_argument("--json", action="store_true", help="print the report JSON to stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvcontract",
        description="coupling-based simulation and contraction-rate certification "
                    "for McKean-Vlasov SDEs")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", help="assemble the contraction-rate certificate")
    _add_common(p)
    p.add_argument("--emit-cert", default=None, help="certificate JSON path")
    p.add_argument("--allow-noncontractive", action="store_true")

    p = sub.add_parser("simulate", help="run a coupled decay experiment")
    _add_common(p)
    p.add_argument("--coupling", choices=("reflection", "synchronous"),
                   default="reflection")
    p.add_argument("--cost", choices=("auto", "plain", "weighted", "phi"),
                   default="auto")
    p.add_argument("--window", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"))

    p = sub.add_parser("fit", help="fit a decay rate to a recorded curve")
    p.add_argument("curve", help="CSV with columns t,distance,...")
    p.add_argument("--window", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--out", default="out")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("check", help="probe the structural hypotheses")
    _add_common(p)
    p.add_argument("--hypotheses", default="auto",
                   help="comma list from {h1,h2,cc1,puncture}; 'auto' picks the "
                        "checks applicable to the scenario family")

    p = sub.add_parser("stationary", help="estimate the invariant law by long run")
    _add_common(p)
    p.add_argument("--burn-in", type=float, default=None)
    p.add_argument("--samples", type=int, default=8192)

    p = sub.add_parser("fpe", help="solve the 1-d nonlinear Fokker-Planck equation")
    _add_common(p)
    p.add_argument("--t-final", type=float, default=None)
    p.add_argument("--snapshots", type=int, default=5)

    p = sub.add_parser("psi", help="emit the scenario's distance-shaping function")
    _add_common(p)
    return parser


def _load(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_scenario(args.scenario, **overrides)


def _scenario_hash(scenario) -> str:
    text = tomlmini.emit(scenario.to_sections())
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class _Report:
    def __init__(self, args, scenario=None):
        self.t0 = time.perf_counter()
        self.out_dir = Path(args.out)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.data = {
            "command": " ".join(sys.argv),
            "version": __version__,
            "outputs": [],
            "checks": {},
        }
        if scenario is not None:
            self.data["scenario"] = scenario.name
            self.data["scenario_hash"] = _scenario_hash(scenario)
            self.data["master_seed"] = scenario.sim.seed

    def add_output(self, path) -> Path:
        self.data["outputs"].append(str(path))
        return Path(path)

    def check(self, name: str, passed: bool, detail=None):
        self.data["checks"][name] = {"pass": bool(passed), "detail": detail}

    def finish(self, args, name: str) -> dict:
        self.data["wall_time_s"] = time.perf_counter() - self.t0
        path = self.out_dir / f"report_{name}.json"
        jsonio.dump(self.data, path)
        self.data["outputs"].append(str(path))
        if args.json:
            print(jsonio.dumps(self.data))
        missing = [p for p in self.data["outputs"] if not Path(p).exists()]
        if missing:
            raise MvContractError(f"report lists missing outputs: {missing}")
        return self.data


def cmd_rate(args) -> int:
    scenario = _load(args)
    report = _Report(args, scenario)
    certified = certify_scenario(scenario)
    cert = certified.certificate
    cert_path = Path(args.emit_cert) if args.emit_cert else report.out_dir / "certificate.json"
    jsonio.dump(cert.to_json_dict(), report.add_output(cert_path))
    if certified.psi is not None:
        certified.psi.to_csv(report.add_output(report.out_dir / "psi.csv"))
    report.check("contractive", cert.contractive,
                 {"theorem_rate": cert.theorem_rate})
    print(f"theorem_rate = {jsonio.format_float(cert.theorem_rate)} "
          f"({'contractive' if cert.contractive else 'non-contractive'})")
    report.finish(args, "rate")
    if cert.contractive or args.allow_noncontractive:
        return EXIT_OK
    return EXIT_CHECK_FAILED


def cmd_simulate(args) -> int:
    scenario = _load(args)
    report = _Report(args, scenario)
    cost, cert = _resolve_cost(scenario, args.cost)
    window = tuple(args.window) if args.window else None
    curve = run_decay_experiment(scenario, cost=cost, coupling=args.coupling,
                                 window=window, threads=max(1, args.threads))
    curve.to_csv(report.add_output(report.out_dir / "decay.csv"))
    summary = curve.fit_summary()
    if cert is not None:
        summary["certificate_rate"] = cert.theorem_rate
    jsonio.dump(summary, report.add_output(report.out_dir / "fit.json"))
    report.check("decay_recorded", True,
                 {"n_records": int(curve.times.size), "degenerate": curve.degenerate})
    if curve.degenerate:
        print("decay curve degenerate (all distances zero); fit skipped")
    else:
        print(f"fitted rate = {jsonio.format_float(curve.fit.rate)} "
              f"+/- {jsonio.format_float(curve.fit.ci_half)}")
    report.finish(args, "simulate")
    return EXIT_OK


def _resolve_cost(scenario, choice: str):
    cert = None
    if choice == "plain":
        return plain_cost(), None
    if choice == "phi":
        return phi_cost(scenario.extras["phi_components"]), None
    if choice == "weighted" or (choice == "auto" and scenario.psi_kind == "eigen"):
        certified = certify_scenario(scenario)
        lyap = certified.lyapunov if certified.lyapunov is not None \
            else scenario.coefficients.lyapunov
        beta = certified.certificate.params.get("beta", lyap.beta)
        return weighted_cost(certified.psi, lyap.v, beta), certified.certificate
    return scenario_cost(scenario), None


def cmd_fit(args) -> int:
    names, data = jsonio.read_csv(args.curve)
    if "t" not in names or "distance" not in names:
        raise ScenarioFormatError("curve CSV must have columns t,distance")
    t = data[:, names.index("t")]
    d = data[:, names.index("distance")]
    window = tuple(args.window) if args.window else None
    result = fit_exponential_rate(t, d, window=window)
    out = {"rate": result.rate, "intercept": result.intercept,
           "ci_half": result.ci_half, "residual": result.residual,
           "n_used": result.n_used, "n_zero_excluded": result.n_zero_excluded,
           "window": list(result.window), "degenerate": result.degenerate}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonio.dump(out, out_dir / "fit.json")
    if args.json:
        print(jsonio.dumps(out))
    else:
        print(f"rate = {jsonio.format_float(result.rate)} "
              f"+/- {jsonio.format_float(result.ci_half)} "
              f"(n={result.n_used}, zeros excluded: {result.n_zero_excluded})")
    if result.degenerate:
        raise FitError("all distances in the window are zero")
    return EXIT_OK


_FAMILY_CHECKS = {
    "ou": ("h1", "h2"),
    "example21": ("h1", "h2"),
    "granular": ("h2", "cc1", "puncture"),
    "orderpreserving": ("h2",),
}


def cmd_check(args) -> int:
    scenario = _load(args)
    report = _Report(args, scenario)
    wanted = (_FAMILY_CHECKS[scenario.family] if args.hypotheses == "auto"
              else tuple(s.strip() for s in args.hypotheses.split(",") if s.strip()))
    coeffs = scenario.coefficients
    rng = aux_generator(scenario.sim.seed, tag=51)
    probe = np.concatenate([np.linspace(-20, 20, 801)[:, None] * e[None, :]
                            for e in np.eye(scenario.dim)])
    all_ok = True
    for name in wanted:
        if name == "h2":
            rep = check_decomposition(coeffs, probe)
            report.check("h2_decomposition", rep.ok,
                         {"max_psd_violation": rep.max_psd_violation,
                          "max_asymmetry": rep.max_asymmetry})
            all_ok &= rep.ok
        elif name == "h1":
            lyap = coeffs.lyapunov
            if lyap is None:
                report.check("h1_lyapunov", False, {"reason": "no Lyapunov weight"})
                all_ok = False
                continue
            if np.isnan(lyap.k0):
                certified = certify_scenario(scenario)
                lyap = certified.lyapunov
            laws = [scenario.mu0.draw(256, scenario.dim, rng), np.zeros((1, scenario.dim))]
            rep = check_lyapunov(coeffs, lyap, probe, laws)
            report.check("h1_lyapunov", rep.ok,
                         {"h12_max": rep.h12_max, "h11_max": rep.h11_max,
                          "worst_point": rep.worst_point.tolist(),
                          "k0": lyap.k0, "k1": lyap.k1})
            all_ok &= rep.ok
        elif name == "cc1":
            ex = scenario.extras
            if "hess_G" not in ex:
                report.check("cc1", False, {"reason": "no Hessian data"})
                all_ok = False
                continue
            z_probe = rng.normal(size=(8, scenario.dim)) * 2.0
            rep = check_cc1(ex["hess_G"], ex.get("hess_W_x"), ex["lambda0"],
                            ex["theta1"], ex["theta2"],
                            probe[np.abs(probe[:, 0]) <= 10.0], z_probe)
            report.check("cc1", rep.ok, {"min_margin": rep.min_margin,
                                         "worst_x": rep.worst_x.tolist()})
            all_ok &= rep.ok
        elif name == "puncture":
            ex = scenario.extras
            kappa_hat = puncture_mass(ex["s_b"], ex["theta2"], scenario.dim,
                                      n_lines=1000, seed=scenario.sim.seed)
            bound = 4.0 * ex["lambda0"] + 1e-6
            ok = kappa_hat <= bound
            report.check("puncture_mass", ok,
                         {"kappa": kappa_hat, "bound_4_lambda0": bound})
            all_ok &= ok
        else:
            raise ScenarioFormatError(f"unknown hypothesis {name!r}")
    for name, res in report.data["checks"].items():
        print(f"{name}: {'pass' if res['pass'] else 'FAIL'}")
    report.finish(args, "check")
    return EXIT_OK if all_ok else EXIT_CHECK_FAILED


def cmd_stationary(args) -> int:
    scenario = _load(args)
    report = _Report(args, scenario)
    burn = args.burn_in if args.burn_in is not None else scenario.sim.t_final
    samples = estimate_stationary(scenario, burn_in=burn, n_samples=args.samples)
    jsonio.write_csv(report.add_output(report.out_dir / "stationary_samples.csv"),
                     ",".join(f"x{i}" for i in range(scenario.dim)), samples)
    moments = {"mean": samples.mean(axis=0).tolist(),
               "var": samples.var(axis=0).tolist(),
               "n": int(samples.shape[0]), "burn_in": burn}
    jsonio.dump(moments, report.add_output(report.out_dir / "stationary_moments.json"))
    print(f"stationary mean {moments['mean']}, var {moments['var']}")
    report.finish(args, "stationary")
    return EXIT_OK


def cmd_fpe(args) -> int:
    scenario = _load(args)
    report = _Report(args, scenario)
    grid, prob = problem_from_scenario(scenario)
    rng = aux_generator(scenario.sim.seed, tag=2)
    init = scenario.mu0.draw(100_000, 1, rng)[:, 0]
    hist, edges = np.histogram(init, bins=grid.n_cells,
                               range=(grid.x_lo, grid.x_hi), density=True)
    grid.set_density(hist)
    t_final = args.t_final if args.t_final is not None else scenario.fpe.t_final
    solver = FPSolver(grid, prob, dt=scenario.fpe.dt, scheme=scenario.fpe.scheme)
    times = np.linspace(0.0, t_final, max(2, args.snapshots))
    for i, t_next in enumerate(times):
        while solver.time < t_next - 1e-12:
            solver.step()
        path = report.add_output(report.out_dir / f"density_{i:03d}.csv")
        jsonio.write_csv(path, "x,rho", np.column_stack([grid.centers, grid.rho]))
    report.check("mass_conserved", abs(grid.mass - 1.0) <= 1e-12,
                 {"mass": grid.mass, "steps": solver.n_steps})
    report.check("wall_mass", not solver.wall_mass_flag)
    print(f"fpe solved to t={solver.time:.6g} in {solver.n_steps} steps; "
          f"mass={jsonio.format_float(grid.mass)}")
    report.finish(args, "fpe")
    return EXIT_OK


def cmd_psi(args) -> int:
    scenario = _load(args)
    report = _Report(args, scenario)
    certified = certify_scenario(scenario)
    if certified.psi is None:
        raise MvContractError("scenario family carries no psi table")
    certified.psi.to_csv(report.add_output(report.out_dir / "psi.csv"))
    print(f"psi table written ({certified.psi.grid.size} nodes, "
          f"c_psi={jsonio.format_float(certified.psi.c_psi)})")
    report.finish(args, "psi")
    return EXIT_OK


_COMMANDS = {
    "rate": cmd_rate,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "check": cmd_check,
    "stationary": cmd_stationary,
    "fpe": cmd_fpe,
    "psi": cmd_psi,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ScenarioFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MvContractError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
