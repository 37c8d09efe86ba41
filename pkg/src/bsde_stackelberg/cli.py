"""Command-line entry point.

Loads a scenario JSON file, runs the requested pipeline and writes
deterministic CSV/JSON artifacts: identical inputs (scenario, seed,
steps, paths) produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import follower as fol
from . import leader as led
from .finance import consumption_equilibrium, consumption_paths_csv, initial_reserve
from .model import AffineControl, SpecError, validate_spec
from .odeint import DivergenceError, SingularityError
from .oracle import (
    build_discrete_problem,
    control_rms_gap,
    deterministic_follower_oracle,
    deterministic_leader_oracle,
    oracle_report,
)
from .riccati import (
    UnsolvableError,
    build_stacked_system,
    p1_field,
    p2_field,
    pi1_closed_form,
    pi1_field,
    pi2_closed_form,
    pi2_field,
    riccati_csv,
    riccati_residual,
    solve_p1,
    solve_p2,
    solve_pi1,
    solve_pi2,
)
from .sampling import MonteCarloConfig
from .scenario import Scenario, load_scenario

EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_IO = 3

CSV_PATH_CAP = 50  # per-path CSVs list at most this many paths

TOLERANCE_PROFILES = {
    "strict": {"follower_rel_gap": 1e-3, "leader_rel_gap": 1e-2},
    "desk": {"follower_rel_gap": 1e-2, "leader_rel_gap": 5e-2},
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    return x


def _write_json(out: Path, name: str, payload: dict):
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    (out / name).write_text(text + "\n")


def _write_text(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _provenance(scn: Scenario, args) -> dict:
    return {
        "scenario_sha256": scn.sha256,
        "tolerance_profile": args.tolerance,
        "steps": scn.spec.grid.steps,
        "paths": args.paths,
        "seed": args.seed,
    }


def _validation_payload(scn: Scenario) -> tuple[dict, bool]:
    report = validate_spec(scn.spec, strict=(scn.mode == "strict"))
    payload = {
        "mode": scn.mode,
        "passed": report.passed,
        "violations": [
            {
                "assumption": v.assumption,
                "location": v.location,
                "message": v.message,
                "severity": v.severity,
            }
            for v in report.violations
        ],
    }
    return payload, report.passed


def cmd_validate(scn: Scenario, out: Path, args) -> int:
    payload, passed = _validation_payload(scn)
    payload.update(_provenance(scn, args))
    _write_json(out, "summary.json", payload)
    print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    return 0 if passed else EXIT_VALIDATION


def _riccati_bundle(scn: Scenario):
    spec = scn.spec
    p1 = solve_p1(spec)
    p2 = solve_p2(spec, p1)
    sys = build_stacked_system(spec, p1, p2)
    pi1 = solve_pi1(sys, spec.R2)
    pi2 = solve_pi2(sys, spec.R2, pi1)
    return p1, p2, sys, pi1, pi2


def cmd_riccati(scn: Scenario, out: Path, args) -> int:
    spec = scn.spec
    p1, p2, sys, pi1, pi2 = _riccati_bundle(scn)
    for ric in (p1, p2, pi1, pi2):
        _write_text(out, f"riccati_{ric.tag.lower()}.csv", riccati_csv(ric))
    residuals = {
        "p1": riccati_residual(p1, p1_field(spec)),
        "p2": riccati_residual(p2, p2_field(spec, p1)),
        "pi1": riccati_residual(pi1, pi1_field(sys, spec.R2)),
        "pi2": riccati_residual(pi2, pi2_field(sys, spec.R2, pi1)),
    }
    solvability: dict = {"closed_form_applicable": bool(np.max(np.abs(spec.C.values)) < 1e-12)}
    if solvability["closed_form_applicable"]:
        try:
            cf1, rep1 = pi1_closed_form(sys, spec.R2, spec.grid)
            cf2, rep2 = pi2_closed_form(sys, spec.R2, spec.grid)
            solvability["pi1"] = {
                "min_determinant": rep1.min_determinant,
                "satisfied": rep1.satisfied,
                "max_gap_vs_rk4": float(np.max(np.abs(cf1.values - pi1.values))),
            }
            solvability["pi2"] = {
                "min_determinant": rep2.min_determinant,
                "satisfied": rep2.satisfied,
                "max_gap_vs_rk4": float(np.max(np.abs(cf2.values - pi2.values))),
            }
        except UnsolvableError as e:
            solvability["error"] = str(e)
    _write_json(out, "solvability.json", solvability)
    summary = {
        "residual_max": {k: v[0] for k, v in residuals.items()},
        "residual_argmax_t": {k: v[1] for k, v in residuals.items()},
        "asymmetry_max": {
            r.tag.lower(): r.max_asymmetry() for r in (p1, p2, pi1, pi2)
        },
    }
    summary.update(_provenance(scn, args))
    _write_json(out, "summary.json", summary)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return 0


def _follower_terminal_defect(spec, ens) -> float:
    xi = spec.xi.a[None] + ens.bundle.W[:, -1, None] * spec.xi.b[:, 0][None]
    return float(np.max(np.abs(ens.y[:, -1] - xi), initial=0.0))


def cmd_follower(scn: Scenario, out: Path, args) -> int:
    spec = scn.spec
    p1 = solve_p1(spec)
    p2 = solve_p2(spec, p1)
    mc = MonteCarloConfig(paths=args.paths, seed=args.seed)
    ens = fol.follower_pipeline(spec, p1, p2, scn.u2, mc=mc)
    rms, rmax = fol.closed_loop_residual(spec, p2, ens)
    direction = AffineControl.constant(spec.grid, np.ones(spec.dims.k))
    stat = fol.check_follower_stationarity(spec, ens, direction)
    _write_text(out, "paths_follower.csv", fol.follower_paths_csv(ens, CSV_PATH_CAP))
    summary = {
        "J1": {"mean": ens.J1[0], "stderr": ens.J1[1]},
        "stationarity": {
            "algebraic": stat["algebraic_residual"],
            "extrapolated_slope": stat["extrapolated_slope"],
        },
        "terminal_error_max": _follower_terminal_defect(spec, ens),
        "bsde_residual_rms": rms,
        "bsde_residual_max": rmax,
    }
    summary.update(_provenance(scn, args))
    _write_json(out, "summary.json", summary)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return 0


def cmd_leader(scn: Scenario, out: Path, args) -> int:
    spec = scn.spec
    mc = MonteCarloConfig(paths=args.paths, seed=args.seed)
    sol = led.solve_equilibrium(spec, mc=mc)
    ens = sol.ensemble
    rms, rmax = led.leader_bsde_residual(sol.system, spec.R2, sol.pi2, ens)
    direction = AffineControl.constant(spec.grid, np.ones(spec.dims.k))
    lead_stat = led.check_leader_stationarity(sol, direction)
    # follower optimality along the equilibrium trajectory
    fol_resid = 0.0
    for i, t in enumerate(spec.grid.nodes):
        x = ens.ybar[:, i] @ sol.p2.values[i].T + ens.phibar[:, i]
        r = x @ spec.B1(t) + ens.u1[:, i] @ spec.R1(t).T
        fol_resid = max(fol_resid, float(np.max(np.abs(r), initial=0.0)))
    J1 = fol.quadratic_cost(
        spec.grid, ens.ybar, ens.u1, ens.zbar, spec.Q1, spec.R1, spec.S1, spec.G1
    )
    _write_text(out, "paths_leader.csv", led.leader_paths_csv(ens, CSV_PATH_CAP))
    summary = {
        "J1": {"mean": J1[0], "stderr": J1[1]},
        "J2": {"mean": ens.J2[0], "stderr": ens.J2[1]},
        "stationarity": {
            "follower": fol_resid,
            "leader": lead_stat["algebraic_residual"],
            "leader_extrapolated_slope": lead_stat["extrapolated_slope"],
        },
        "terminal_error_max": led.terminal_defect(sol.system, ens),
        "initial_coupling_max": led.initial_coupling_defect(sol.system, ens),
        "decoupling_consistency_max": led.decoupling_consistency(ens, sol.pi2),
        "bsde_residual_rms": rms,
        "bsde_residual_max": rmax,
    }
    summary.update(_provenance(scn, args))
    _write_json(out, "summary.json", summary)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return 0


def cmd_finance(scn: Scenario, out: Path, args) -> int:
    if scn.market is None:
        print("scenario has no 'market' section", file=sys.stderr)
        return EXIT_VALIDATION
    mc = MonteCarloConfig(paths=args.paths, seed=args.seed)
    cs = consumption_equilibrium(scn.market, mc=mc)
    reserve = initial_reserve(cs.solution)
    ens = cs.solution.ensemble
    spec = cs.solution.spec
    J1 = fol.quadratic_cost(
        spec.grid, ens.ybar, ens.u1, ens.zbar, spec.Q1, spec.R1, spec.S1, spec.G1
    )
    _write_text(out, "paths_finance.csv", consumption_paths_csv(cs, CSV_PATH_CAP))
    summary = {
        "initial_reserve": cs.initial_reserve,
        "Y0": cs.Y0,
        "J1": {"mean": J1[0], "stderr": J1[1]},
        "J2": {"mean": ens.J2[0], "stderr": ens.J2[1]},
        "dual_check": {
            "mc_estimate": reserve["mc_estimate"],
            "stderr": reserve["stderr"],
            "gap": reserve["gap"],
        },
    }
    summary.update(_provenance(scn, args))
    _write_json(out, "summary.json", summary)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return 0


def cmd_verify(scn: Scenario, out: Path, args) -> int:
    spec = scn.spec
    if not spec.xi.deterministic:
        print("oracle verification needs a deterministic terminal datum", file=sys.stderr)
        return EXIT_VALIDATION
    profile = TOLERANCE_PROFILES[args.tolerance]
    bundle_paths = 2  # deterministic scenario: all paths identical
    mc = MonteCarloConfig(paths=bundle_paths, seed=args.seed)

    p1 = solve_p1(spec)
    p2 = solve_p2(spec, p1)
    prob = build_discrete_problem(spec)
    u2_steps = 0.5 * (scn.u2.u_const.values[:-1, :, 0] + scn.u2.u_const.values[1:, :, 0])
    fol_oracle = deterministic_follower_oracle(prob, u2_steps)
    fol_ens = fol.follower_pipeline(spec, p1, p2, scn.u2, mc=mc)
    fol_rep = oracle_report(
        fol_oracle.cost,
        fol_ens.J1[0],
        control_rms_gap(fol_oracle.control, fol_ens.u1[0]),
        spec.grid.steps,
    )

    led_oracle = deterministic_leader_oracle(spec)
    sol = led.solve_equilibrium(spec, mc=mc)
    led_rep = oracle_report(
        led_oracle.cost,
        sol.ensemble.J2[0],
        control_rms_gap(led_oracle.control, sol.ensemble.u2[0]),
        spec.grid.steps,
    )
    payload = {"follower": fol_rep, "leader": led_rep}
    _write_json(out, "oracle.json", payload)
    ok = (
        fol_rep["rel_gap"] <= profile["follower_rel_gap"]
        and led_rep["rel_gap"] <= profile["leader_rel_gap"]
    )
    summary = {"oracle": payload, "passed": ok, "thresholds": profile}
    summary.update(_provenance(scn, args))
    _write_json(out, "summary.json", summary)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return 0 if ok else EXIT_VALIDATION


COMMANDS = {
    "validate": cmd_validate,
    "riccati": cmd_riccati,
    "follower": cmd_follower,
    "leader": cmd_leader,
    "equilibrium": cmd_leader,
    "finance": cmd_finance,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bsde-stackelberg",
        description="Leader-follower equilibria of linear-quadratic BSDE games",
    )
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--steps", type=int, default=None, help="override grid steps")
    p.add_argument("--paths", type=int, default=10000, help="Monte Carlo paths")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--tolerance", choices=sorted(TOLERANCE_PROFILES), default="strict")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = load_scenario(args.scenario, steps=args.steps)
    except (OSError, json.JSONDecodeError) as e:
        print(f"cannot read scenario: {e}", file=sys.stderr)
        return EXIT_IO
    except (SpecError, KeyError, ValueError) as e:
        print(f"bad scenario: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.command != "validate":
        _, passed = _validation_payload(scn)
        if not passed:
            print("scenario fails validation; run the validate command", file=sys.stderr)
            return EXIT_VALIDATION

    try:
        return COMMANDS[args.command](scn, Path(args.out), args)
    except (DivergenceError, SingularityError, UnsolvableError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"I/O failure: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
