"""Command-line surface: validate, run, check-pe, sweep.

Exit codes: 0 ok, 1 validation failure, 2 runtime error, 3 parse error.
``validate`` is the gate ``run`` itself applies: the stress/configuration
compatibility check, the gain conditions, and the stability certificate
are mandatory; the collision-avoidance certificate is advisory (it is a
sufficient condition only, so a failing certificate downgrades to a
warning).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import control as ctl
from . import engine
from . import formation as fm
from .scenario import ParseError, Scenario, load_scenario

log = logging.getLogger("entrapsim")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARSE = 3


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    updates = {}
    if getattr(args, "dt", None) is not None:
        updates["dt"] = args.dt
    if getattr(args, "horizon", None) is not None:
        updates["horizon"] = args.horizon
    if getattr(args, "sample_every", None) is not None:
        updates["sample_every"] = args.sample_every
    if getattr(args, "smooth_sgn", None) is not None:
        updates["smooth_sgn_eps"] = args.smooth_sgn
    return scenario.replace(**updates) if updates else scenario


def validate_scenario(scenario: Scenario) -> dict:
    """Run every certificate on a scenario; see the module docstring for
    what counts as mandatory."""
    cs = engine.compile_scenario(scenario)
    report = {}

    a1 = fm.validate_assumption1(cs.stress, cs.config)
    report["assumption1"] = {
        "equilibrium_residual": a1.equilibrium_residual,
        "tol": a1.tol_eq,
        "lambda_min_ff": a1.lambda_min_ff,
        "follower_block_pd": a1.follower_block_pd,
        "coupling_nonzero": a1.coupling_nonzero,
        "moment_condition_number": a1.moment_condition_number,
        "passes": a1.passes,
    }

    accel_bound, source, operator_bound, leader_bound = engine.resolve_accel_bound(cs)
    gains = ctl.validate_gains(cs.gains, cs.stress, accel_bound)
    report["gains"] = {
        "k_p_margin": gains.k_p_margin,
        "k_v_margin": gains.k_v_margin,
        "k_v_required": gains.k_v_required,
        "k_delta_margin": gains.k_delta_margin,
        "k_delta_required": gains.k_delta_required,
        "lambda_min_ff": gains.lambda_min_ff,
        "accel_bound_used": accel_bound,
        "accel_bound_source": source,
        "accel_operator_bound": operator_bound,
        "leader_accel_bound": leader_bound,
        "passes": gains.passes,
    }

    cert = None
    if gains.passes:
        try:
            cert = ctl.stability_certificate(cs.gains, cs.stress)
            report["stability"] = {
                "lambda_min_P": cert.lambda_min_P,
                "lambda_max_P": cert.lambda_max_P,
                "lambda_min_Q": cert.lambda_min_Q,
                "decay_rate": cert.decay_rate,
                "envelope_coeff": cert.envelope_coeff,
                "passes": True,
            }
        except ctl.GainConditionViolated as exc:
            report["stability"] = {"passes": False, "reason": str(exc)}
    else:
        report["stability"] = {"passes": False, "reason": "gain conditions failed"}

    # Advisory: sufficient-only collision bound from the initial errors.
    if cert is not None:
        world = engine.initial_world(cs)
        pf_star, vf_star, _ = engine.desired_follower_states(cs, 0.0)
        dp = world.positions[cs.n_l:] - pf_star
        dv = world.velocities[cs.n_l:] - vf_star
        e0 = float(np.hypot(np.linalg.norm(dp), np.linalg.norm(dv)))
        rho0 = {}
        for (i, j) in cs.edges:
            true = float(np.hypot(*(world.positions[j - 1] - world.positions[i - 1])))
            rho0[(i, j)] = world.estimator.rho_hat[(i, j)] - true
        gap = engine.min_desired_gap(cs, scenario.horizon)
        try:
            av = ctl.avoidance_certificate(
                e0, rho0, cs.gains, cs.stress, cert, gap, scenario.c_c
            )
            report["avoidance"] = {
                "c_e": av.c_e,
                "c_c": av.c_c,
                "min_desired_gap": av.min_desired_gap,
                "lhs": av.lhs,
                "rhs": av.rhs,
                "passes": av.passes,
            }
        except ctl.InvalidClearance as exc:
            report["avoidance"] = {"passes": False, "reason": str(exc)}
    else:
        report["avoidance"] = {"passes": False, "reason": "no stability certificate"}

    report["mandatory_pass"] = bool(
        report["assumption1"]["passes"]
        and report["gains"]["passes"]
        and report["stability"]["passes"]
    )
    return report


def _print_validation(report: dict) -> None:
    def line(name, ok, detail):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    a1 = report["assumption1"]
    line(
        "stress/configuration",
        a1["passes"],
        f"residual {a1['equilibrium_residual']:.3e} (tol {a1['tol']:.0e}), "
        f"lambda_min(L_ff) {a1['lambda_min_ff']:.6g}, "
        f"coupling nonzero: {a1['coupling_nonzero']}",
    )
    g = report["gains"]
    line(
        "gain conditions",
        g["passes"],
        f"k_v margin {g['k_v_margin']:.6g} (needs > {g['k_v_required']:.6g}), "
        f"k_delta margin {g['k_delta_margin']:.6g} "
        f"(bound {g['accel_bound_used']:.6g} from {g['accel_bound_source']})",
    )
    s = report["stability"]
    if s["passes"]:
        line(
            "stability certificate",
            True,
            f"decay rate {s['decay_rate']:.6g} 1/s, envelope coeff {s['envelope_coeff']:.6g}",
        )
    else:
        line("stability certificate", False, s.get("reason", ""))
    av = report["avoidance"]
    if "lhs" in av:
        detail = f"lhs {av['lhs']:.6g} vs rhs {av['rhs']:.6g} (advisory)"
    else:
        detail = av.get("reason", "") + " (advisory)"
    line("collision-avoidance certificate", av["passes"], detail)
    if not av["passes"]:
        log.warning(
            "avoidance certificate failed; the bound is sufficient only, "
            "the run will proceed and report the empirical minimum distance"
        )


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _cmd_validate(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    report = validate_scenario(scenario)
    _print_validation(report)
    return EXIT_OK if report["mandatory_pass"] else EXIT_VALIDATION


def _run_one(scenario: Scenario, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = validate_scenario(scenario)
    result = engine.run(scenario)
    result.trace.to_csv(out_dir / "trace.csv")
    _json_dump(result.summary, out_dir / "summary.json")
    _json_dump(report, out_dir / "certificates.json")
    return result.summary


def _cmd_run(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    report = validate_scenario(scenario)
    _print_validation(report)
    if not report["mandatory_pass"]:
        print("validation failed; not running")
        return EXIT_VALIDATION
    out_dir = Path(args.out)
    try:
        summary = _run_one(scenario, out_dir)
    except engine.EngineError as exc:
        print(f"run aborted: {exc}")
        return EXIT_RUNTIME
    t = summary["terminal"]
    print(
        f"wrote {out_dir / 'trace.csv'}\n"
        f"terminal: max|rho_tilde| {t['max_abs_rho_tilde']:.3e} m, "
        f"|dp| {t['dp_norm']:.3e} m, |dv| {t['dv_norm']:.3e} m/s, "
        f"min gap {summary['min_gap']['value']:.3f} m"
    )
    for w in summary["warnings"]:
        log.warning(w)
    return EXIT_OK


def _cmd_check_pe(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    report = engine.leader_excitation_report(scenario, dt=args.dt)
    verdicts = set()
    for edge, entry in sorted(report.items()):
        verdicts.add(entry["verdict"])
        mi = entry["min_integral"]
        margin = "" if mi is None else f" (min integral {mi:.4f}, threshold {entry['threshold']})"
        print(f"edge {edge}: {entry['verdict']}{margin}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _json_dump(report, out / "pe_report.json")
    return EXIT_OK if verdicts == {"satisfied"} else EXIT_VALIDATION


def _cmd_sweep(args) -> int:
    out_root = Path(args.out)
    scenarios = []
    for p in args.scenario:
        scenario = _apply_overrides(load_scenario(p), args)
        report = validate_scenario(scenario)
        if not report["mandatory_pass"]:
            print(f"{p}: validation failed; skipping sweep")
            return EXIT_VALIDATION
        scenarios.append((p, scenario))
    failures = 0
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=min(len(scenarios), args.jobs)
    ) as pool:
        futures = {
            pool.submit(_run_one, sc, out_root / sc.name): path
            for path, sc in scenarios
        }
        for fut, path in futures.items():
            try:
                summary = fut.result()
                print(f"{path}: done (min gap {summary['min_gap']['value']:.3f} m)")
            except engine.EngineError as exc:
                print(f"{path}: run aborted: {exc}")
                failures += 1
    return EXIT_RUNTIME if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entrapsim",
        description="Bearing-based target-entrapping formation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--scenario", required=True, help="scenario JSON path")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--dt", type=float, default=None, help="override integrator step")
        p.add_argument("--horizon", type=float, default=None, help="override horizon")
        p.add_argument(
            "--sample-every", dest="sample_every", type=int, default=None,
            help="override recording period (in steps)",
        )
        p.add_argument(
            "--smooth-sgn", dest="smooth_sgn", type=float, default=None,
            help="smoothing width for the signum term (off by default)",
        )

    common(sub.add_parser("validate", help="run all certificates"), out_required=False)
    common(sub.add_parser("run", help="simulate and write trace/summary/certificates"),
           out_required=True)
    pe = sub.add_parser("check-pe", help="check the leader-trajectory excitation condition")
    common(pe, out_required=False)
    pe.add_argument("--out", default=None, help="optional directory for pe_report.json")
    sweep = sub.add_parser("sweep", help="run several scenarios in parallel")
    sweep.add_argument("--scenario", required=True, nargs="+", help="scenario JSON paths")
    sweep.add_argument("--out", required=True, help="output root directory")
    sweep.add_argument("--jobs", type=int, default=4)
    sweep.add_argument("--dt", type=float, default=None)
    sweep.add_argument("--horizon", type=float, default=None)
    sweep.add_argument("--sample-every", dest="sample_every", type=int, default=None)
    sweep.add_argument("--smooth-sgn", dest="smooth_sgn", type=float, default=None)
    return parser


_COMMANDS = {
    "validate": _cmd_validate,
    "run": _cmd_run,
    "check-pe": _cmd_check_pe,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except engine.EngineError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
