"""Command-line front end.

Commands::

    midc-droop simulate --scenario FILE [--out DIR]
    midc-droop design   --scenario FILE [--objective 1|2] [--out DIR]
    midc-droop verify   --scenario FILE [--out DIR]
    midc-droop compare  --scenario FILE [--objective 1|2] [--out DIR]

``--scenario`` takes a path or the name of a bundled fixture.  Exit codes:
0 success, 1 a check failed, 2 scenario not found, 3 solver failure (a
partial trajectory is written when possible), 4 invalid input.  Every
nonzero exit writes one JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import simulate, steady_state
from .errors import MidcError, SimulationError, SolverError
from .oefc import OefcProblem, droop_coefficients, solve_oefc_oracle
from .primal_dual import compare_with_dynamics
from .report import RunReport, control_cost, fmt, steady_allocations, write_trajectory_csv
from .scenario import FIXTURES, DroopMode, Objective, Scenario, fixture_path, load_scenario_file
from .stability import LyapunovConfig, check_security, hessian_blocks, lyapunov_decrease_report, lyapunov_value

EXIT_OK, EXIT_CHECK, EXIT_NOT_FOUND, EXIT_SOLVER, EXIT_INPUT = 0, 1, 2, 3, 4

EQUIVALENCE_WINDOW_S = 5.0
OPTIMALITY_TOL = 1e-4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def round_half_up(x: float, places: int = 2) -> str:
    """Decimal rounding as printed in coefficient tables (11.025 -> 11.03)."""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(round(x, 9))).quantize(q, rounding=ROUND_HALF_UP))


# -- scenario handling -------------------------------------------------------

def resolve_scenario(arg: str) -> Path:
    path = Path(arg)
    if path.is_file():
        return path
    stem = path.stem if path.suffix else arg
    if stem in FIXTURES:
        return fixture_path(stem)
    raise CliError(EXIT_NOT_FOUND, "ScenarioNotFound", f"scenario not found: {arg}")


def load(args) -> Scenario:
    path = resolve_scenario(args.scenario)
    scenario = load_scenario_file(path)
    control = scenario.control
    changes = {}
    if getattr(args, "objective", None):
        changes["objective"] = Objective.I if args.objective == "1" else Objective.II
    if getattr(args, "dead_zone_hz", None) is not None:
        if args.dead_zone_hz < 0:
            raise CliError(EXIT_INPUT, "ValueError", "dead zone must be non-negative")
        changes["dead_zone"] = args.dead_zone_hz / scenario.network.f_nominal_hz
    if getattr(args, "droop", None):
        changes["droop"] = DroopMode(args.droop)
    if changes:
        scenario = dataclasses.replace(scenario, control=dataclasses.replace(control, **changes))
    if not scenario.name:
        scenario = dataclasses.replace(scenario, name=path.stem)
    return scenario


def out_dir(args) -> Path | None:
    if not getattr(args, "out", None):
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def emit(rows: list[tuple[str, str]], args, title: str, stream=None) -> None:
    stream = stream or sys.stdout
    if args.format == "rows":
        for key, value in rows:
            stream.write(f"{key},{value}\n")
        return
    stream.write(f"# midc-droop {__version__} {title}\n")
    width = max((len(k) for k, _ in rows), default=0)
    for key, value in rows:
        stream.write(f"{key.ljust(width)}  {value}\n")


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    scenario = load(args)
    out = out_dir(args)
    failure = None
    try:
        traj = simulate(scenario)
    except SimulationError as exc:
        traj = exc.trajectory
        failure = exc
        if traj is None:
            raise
    report = RunReport.from_trajectory(scenario.name, traj, scenario.control.margin)
    if out is not None:
        csv_path = write_trajectory_csv(traj, out / f"{scenario.name}_trajectory.csv")
        report.files = [str(csv_path), str(out / f"{scenario.name}_report.json")]
        (out / f"{scenario.name}_report.json").write_text(report.to_json())
    emit(report.rows(), args, f"simulate {scenario.name}")
    if failure is not None:
        raise CliError(EXIT_SOLVER, type(failure.__cause__ or failure).__name__, f"partial trajectory: {failure}")
    return EXIT_OK


def design_rows(scenario: Scenario) -> list[tuple[str, str]]:
    coeffs = droop_coefficients(scenario)
    net = scenario.network
    rows = [("objective", scenario.control.objective.value), ("droop", scenario.control.droop.value)]
    for g in net.generator_ids:
        k = coeffs.k_gen[g]
        rows.append((f"k_gen.{g}", f"{fmt(k)} ({round_half_up(k)})"))
    for l in net.lccs:
        k = coeffs.k_lcc[l]
        rows.append((f"k_lcc.{net.lccs[l].name}", f"{fmt(k)} ({round_half_up(k)})"))
    return rows


def cmd_design(args) -> int:
    scenario = load(args)
    rows = design_rows(scenario)
    emit(rows, args, f"design {scenario.name}")
    out = out_dir(args)
    if out is not None:
        with (out / f"{scenario.name}_coefficients.csv").open("w") as fh:
            fh.write("unit,k_pu,k_rounded\n")
            for key, value in rows[2:]:
                full, rounded = value.split(" ")
                fh.write(f"{key},{full},{rounded.strip('()')}\n")
    return EXIT_OK


def verify_scenario(scenario: Scenario) -> dict:
    """Run the optimality, equivalence and Lyapunov checks; values are 'pass', 'fail', 'info' or 'skipped: ...'."""
    checks = {}
    traj = simulate(scenario)
    net = traj.final_network
    coeffs = traj.coefficients
    eq = steady_state(net, coeffs)
    boundary = bool(eq.saturated) or bool(traj.saturated[-1].any())
    links_off = any(coeffs.k_lcc[l] <= 0 for l in net.lcc_ids)

    if boundary:
        checks["optimality"] = "skipped: boundary regime"
    elif scenario.control.droop is not DroopMode.OPTIMAL or links_off:
        checks["optimality"] = "skipped: droop is not the optimal design"
    else:
        sol = solve_oefc_oracle(OefcProblem.from_network(net, scenario.control.objective, scenario.control.margin))
        u_gen, u_lcc = steady_allocations(traj)
        sim = np.array([u_gen[g] for g in net.generator_ids] + [u_lcc[l] for l in net.lcc_ids])
        ref = np.concatenate([sol.u_gen, sol.u_lcc])
        gap = float(np.abs(sim - ref).max()) if ref.size else 0.0
        checks["optimality"] = "pass" if sol.interior and gap <= OPTIMALITY_TOL else "fail"
        checks["optimality_gap"] = fmt(gap)

    if boundary:
        checks["equivalence"] = "skipped: boundary regime"
    elif links_off:
        checks["equivalence"] = "skipped: links without droop"
    else:
        t_last = scenario.events[-1].t if scenario.events else 0.0
        window = dataclasses.replace(
            scenario.control, horizon=min(scenario.control.horizon, t_last + EQUIVALENCE_WINDOW_S)
        )
        try:
            rep = compare_with_dynamics(dataclasses.replace(scenario, control=window), coeffs)
            checks["equivalence"] = "pass" if rep.ok else "fail"
            checks["equivalence_max_lam_gap"] = fmt(rep.max_lam_gap)
            checks["equivalence_max_nu_gap"] = fmt(rep.max_nu_gap)
            checks["equivalence_tol"] = fmt(rep.integration_tol)
        except (SolverError, SimulationError) as exc:
            checks["equivalence"] = f"fail: {exc}"

    if links_off:
        checks["lyapunov"] = "skipped: links without droop"
    else:
        cfg = LyapunovConfig.for_network(net, coeffs, scenario.control.lyapunov_d_scale)
        rep = lyapunov_decrease_report(traj, cfg, net)
        blocks = hessian_blocks(cfg, net)
        v_eq = lyapunov_value(eq.theta, np.full(net.n, eq.omega_syn), eq.p_dc, cfg, net).v
        ok = rep.ok and bool(np.all(rep.v >= 0)) and v_eq == 0.0
        ok = ok and blocks["laplacian"].ok and blocks["inertia_pd"] and blocks["link_pd"]
        if scenario.control.dead_zone > 0:
            checks["lyapunov"] = "info: dead zone active" + ("" if ok else ", decrease not certified")
        else:
            checks["lyapunov"] = "pass" if ok else "fail"
        checks["lyapunov_max_v_dot"] = fmt(rep.max_v_dot)
        checks["lyapunov_violations"] = str(len(rep.violations))
        eig = blocks["laplacian"].eigenvalues
        checks["laplacian_kernel_dim"] = str(blocks["laplacian"].kernel_dim)
        checks["laplacian_lambda2"] = fmt(eig[1]) if eig.size > 1 else "nan"
        _, margin = check_security(eq.theta, net)
        checks["security_margin_rad"] = fmt(margin)
    return checks


def _failed(value: str) -> bool:
    return value == "fail" or value.startswith("fail:")


def cmd_verify(args) -> int:
    scenario = load(args)
    checks = verify_scenario(scenario)
    rows = [("scenario", scenario.name)] + [(f"check.{k}", v) for k, v in checks.items()]
    emit(rows, args, f"verify {scenario.name}")
    out = out_dir(args)
    if out is not None:
        (out / f"{scenario.name}_verify.json").write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
    failed = [k for k, v in checks.items() if _failed(v)]
    if failed:
        raise CliError(EXIT_CHECK, "VerificationFailed", f"checks failed: {', '.join(failed)}")
    return EXIT_OK


def compare_scenario(scenario: Scenario) -> dict:
    """Steady allocations and costs under optimal and average droop."""
    result = {}
    for mode in (DroopMode.OPTIMAL, DroopMode.AVERAGE):
        variant = dataclasses.replace(scenario, control=dataclasses.replace(scenario.control, droop=mode))
        traj = simulate(variant)
        u_gen, u_lcc = steady_allocations(traj)
        cost = control_cost(traj.final_network, u_gen, u_lcc, scenario.control.objective, scenario.control.margin)
        result[mode.value] = {"u_gen": u_gen, "u_lcc": u_lcc, "cost": cost, "omega": traj.terminal_omega()}
    return result


def cmd_compare(args) -> int:
    scenario = load(args)
    result = compare_scenario(scenario)
    rows = [("scenario", scenario.name), ("objective", scenario.control.objective.value)]
    for mode, r in result.items():
        rows.append((f"{mode}.terminal_omega_pu", fmt(r["omega"])))
        rows += [(f"{mode}.u_gen.{k}", fmt(v)) for k, v in r["u_gen"].items()]
        rows += [(f"{mode}.u_lcc.{k}", fmt(v)) for k, v in r["u_lcc"].items()]
        rows.append((f"{mode}.cost", fmt(r["cost"])))
    opt, avg = result["optimal"]["cost"], result["average"]["cost"]
    ordered = opt <= avg * (1 + 1e-9) + 1e-15
    rows.append(("check.optimal_not_costlier", "pass" if ordered else "fail"))
    emit(rows, args, f"compare {scenario.name}")
    out = out_dir(args)
    if out is not None:
        doc = {mode: {**r, "u_gen": {str(k): v for k, v in r["u_gen"].items()},
                      "u_lcc": {str(k): v for k, v in r["u_lcc"].items()}} for mode, r in result.items()}
        (out / f"{scenario.name}_compare.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if not ordered:
        raise CliError(EXIT_CHECK, "VerificationFailed", "optimal droop costs more than average droop")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="midc-droop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, objective=False):
        p.add_argument("--scenario", required=True, help="scenario file or bundled fixture name")
        p.add_argument("--out", help="directory for output files")
        p.add_argument("--format", choices=("text", "rows"), default="text")
        if objective:
            p.add_argument("--objective", choices=("1", "2"))
        p.add_argument("--dead-zone-hz", type=float)
        p.add_argument("--droop", choices=[m.value for m in DroopMode])

    common(sub.add_parser("simulate", help="run a scenario and export the trajectory"), objective=True)
    common(sub.add_parser("design", help="print optimal droop coefficients"), objective=True)
    common(sub.add_parser("verify", help="check optimality, equivalence and stability"), objective=True)
    common(sub.add_parser("compare", help="compare optimal and average droop costs"), objective=True)
    return parser


COMMANDS = {"simulate": cmd_simulate, "design": cmd_design, "verify": cmd_verify, "compare": cmd_compare}


def _error_record(code: int, kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}, sort_keys=True) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        _error_record(exc.code, exc.kind, str(exc))
        return exc.code
    except (SolverError, SimulationError) as exc:
        _error_record(EXIT_SOLVER, type(exc).__name__, str(exc))
        return EXIT_SOLVER
    except (MidcError, ValueError) as exc:
        _error_record(EXIT_INPUT, type(exc).__name__, str(exc))
        return EXIT_INPUT
    except OSError as exc:
        _error_record(EXIT_INPUT, type(exc).__name__, str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
