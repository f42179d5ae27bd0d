"""Command-line front end.

Machine-readable output (CSV) goes to standard output or ``--out``; a short
human summary goes to standard error. Exit codes: 0 success, 1 unresolved
scenario or failed power flow, 2 usage, parse or validation error.

``--grid`` and ``--scenario`` accept a file path or ``fixture:NAME`` for a
built-in fixture. ``fixture:random`` builds a random meshed grid seeded by
``SELFGRID_SEED``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import fixtures
from .decomposition import epsilon_decompose, sweep
from .grid_model import PFC, UPF, GridModel, GridParseError, GridValidationError, load_grid
from .power_flow import SingularJacobianError, compute_sensitivity, solve_power_flow
from .scenario_sim import (METHODS, RUNNERS, ScenarioError, check_events, load_scenario, report_csv,
                           write_reports)

EXIT_OK, EXIT_UNRESOLVED, EXIT_USAGE = 0, 1, 2
FIXTURE_PREFIX = "fixture:"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _epsilon_list(text: str) -> list[float]:
    out = []
    for part in text.split(","):
        try:
            eps = float(part)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {part!r}") from None
        if not 0.0 < eps < 1.0:
            raise argparse.ArgumentTypeError(f"epsilon {eps} outside (0, 1)")
        out.append(eps)
    return out


def _method_list(text: str) -> list[str]:
    out = [m.strip() for m in text.split(",") if m.strip()]
    for m in out:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if not out or len(set(out)) != len(out):
        raise argparse.ArgumentTypeError("methods must be a non-empty list without repeats")
    return out


def _grid(spec: str) -> GridModel:
    if spec.startswith(FIXTURE_PREFIX):
        name = spec[len(FIXTURE_PREFIX):]
        if name == "random":
            return fixtures.random_meshed_grid()
        if name not in fixtures.GRIDS:
            raise CliError(f"unknown grid fixture {name!r}", EXIT_USAGE)
        return fixtures.GRIDS[name]()
    try:
        return load_grid(spec)
    except OSError as exc:
        raise CliError(f"cannot read {spec}: {exc.strerror}", EXIT_USAGE) from exc
    except GridValidationError as exc:
        raise CliError("invalid network:\n  " + "\n  ".join(exc.issues), EXIT_USAGE) from exc
    except GridParseError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def _scenario(spec: str):
    if spec.startswith(FIXTURE_PREFIX):
        name = spec[len(FIXTURE_PREFIX):]
        if name not in fixtures.SCENARIOS:
            raise CliError(f"unknown scenario fixture {name!r}", EXIT_USAGE)
        _, config, events = fixtures.SCENARIOS[name]()
        return config, events
    try:
        return load_scenario(spec)
    except OSError as exc:
        raise CliError(f"cannot read {spec}: {exc.strerror}", EXIT_USAGE) from exc
    except ScenarioError as exc:
        raise CliError(f"invalid scenario: {exc}", EXIT_USAGE) from exc


def _sensitivity(grid: GridModel):
    try:
        sol = solve_power_flow(grid)
    except SingularJacobianError as exc:
        raise CliError(f"power flow failed: {exc}", EXIT_UNRESOLVED) from exc
    if not sol.converged:
        raise CliError("power flow did not converge", EXIT_UNRESOLVED)
    return compute_sensitivity(grid, sol)


def _write_csv(rows, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerows(rows)


def cmd_validate(args, out) -> int:
    _grid(args.grid)
    return EXIT_OK


def cmd_decompose(args, out) -> int:
    if len(args.epsilon) != 1:
        raise CliError("decompose takes a single --epsilon", EXIT_USAGE)
    grid = _grid(args.grid)
    sens = _sensitivity(grid)
    dec = epsilon_decompose(sens.voltage_block(args.mode), sens.monitored_buses, sens.dg_ids,
                            args.epsilon[0], grid.transformers)
    rows = [["subnetwork", "dg_ids", "bus_ids", "transformer_ids"]]
    for s in dec.subnetworks:
        rows.append([str(s.id), " ".join(map(str, sorted(s.dg_ids))), " ".join(map(str, sorted(s.bus_ids))),
                     " ".join(map(str, sorted(s.transformer_ids)))])
    if dec.uncontrollable:
        rows.append(["none", "", " ".join(map(str, sorted(dec.uncontrollable))), ""])
    _write_csv(rows, out)
    print(f"{len(dec.subnetworks)} subnetworks, {len(dec.uncontrollable)} uncontrollable buses "
          f"at epsilon {args.epsilon[0]}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    grid = _grid(args.grid)
    sens = _sensitivity(grid)
    rows = [["epsilon", "subnetworks", "max_block_buses", "uncontrollable"]]
    for r in sweep(sens.voltage_block(args.mode), sens.monitored_buses, sens.dg_ids, args.epsilon):
        rows.append([repr(r["epsilon"]), str(r["subnetworks"]), str(r["max_block_buses"]),
                     str(r["uncontrollable"])])
    _write_csv(rows, out)
    return EXIT_OK


def _run_methods(args, methods: list[str]) -> int:
    grid = _grid(args.grid)
    config, events = _scenario(args.scenario)
    if args.mode is not None:
        from dataclasses import replace

        config = replace(config, mode=args.mode)
    try:
        check_events(grid, config, events)
    except ScenarioError as exc:
        raise CliError(f"invalid scenario: {exc}", EXIT_USAGE) from exc
    reports = {m: RUNNERS[m](grid, config, events) for m in methods}
    if args.out is not None:
        write_reports(reports, args.out)
    elif len(reports) == 1:
        sys.stdout.write(report_csv(next(iter(reports.values()))))
    else:
        raise CliError("compare needs --out", EXIT_USAGE)
    code = EXIT_OK
    for m, rep in reports.items():
        state = "resolved" if rep.resolved else "UNRESOLVED"
        extra = f" ({rep.divergence})" if rep.divergence else ""
        print(f"{m}: {state} after {len(rep.rounds)} round(s), {len(rep.involved_dgs)} DG(s), "
              f"{len(rep.involved_nodes)} node(s), {rep.escalations} escalation(s){extra}", file=sys.stderr)
        if not rep.resolved:
            code = EXIT_UNRESOLVED
    return code


def cmd_run(args, out) -> int:
    config, _ = _scenario(args.scenario)
    return _run_methods(args, [config.method])


def cmd_compare(args, out) -> int:
    return _run_methods(args, args.methods)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfgrid", description="Self-organizing distributed voltage regulation.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate a network file")
    v.add_argument("--grid", required=True)
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("decompose", help="list subnetworks at one epsilon (CSV)")
    d.add_argument("--grid", required=True)
    d.add_argument("--epsilon", required=True, type=_epsilon_list)
    d.add_argument("--mode", choices=(PFC, UPF), default=PFC)
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("sweep", help="subnetwork counts over several epsilon values (CSV)")
    s.add_argument("--grid", required=True)
    s.add_argument("--epsilon", required=True, type=_epsilon_list, help="comma-separated values")
    s.add_argument("--mode", choices=(PFC, UPF), default=PFC)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("run", help="run a scenario with the method named in its config")
    r.add_argument("--grid", required=True)
    r.add_argument("--scenario", required=True)
    r.add_argument("--mode", choices=(PFC, UPF), default=None, help="override the scenario mode")
    r.add_argument("--out", default=None, help="output directory; without it the report CSV goes to stdout")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run a scenario under several methods and tabulate")
    c.add_argument("--grid", required=True)
    c.add_argument("--scenario", required=True)
    c.add_argument("--methods", type=_method_list, default=list(METHODS))
    c.add_argument("--mode", choices=(PFC, UPF), default=None, help="override the scenario mode")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, sys.stdout)
    except CliError as exc:
        print(f"selfgrid {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
