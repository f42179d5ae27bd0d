"""End-to-end scenarios: event timeline, regulation rounds, baselines and reports.

Every round applies the events due, solves the power flow, lets the chosen
controller act on the voltages it sees, pushes the new setpoints into the grid
and solves again. The second solve is what the round is judged on.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .decomposition import EpsilonLadder
from .grid_model import PFC, UPF, GridModel, dg_surplus
from .mas import AgentNetwork
from .power_flow import (DEFAULT_TOL, SingularJacobianError, compute_losses, compute_sensitivity,
                         solve_power_flow)
from .regulation import (OVER, UNDER, Insufficient, RegulationPlan, Violation, VoltageLimits,
                         apply_adjustment, apply_plan, detect_violations, plan_global)

PROPOSED, GLOBAL, LOCAL = "proposed", "global", "local"
METHODS = (PROPOSED, GLOBAL, LOCAL)

DG_TRIP, DG_RESTORE, LOAD_SCALE, FORCE_EPSILON = "dg_trip", "dg_restore", "load_scale", "force_epsilon"
EVENT_KINDS = (DG_TRIP, DG_RESTORE, LOAD_SCALE, FORCE_EPSILON)

ROUND_COLUMNS = ("round", "epsilon", "violations_before", "violations_after", "v_min", "v_max",
                 "plans", "lp_sizes", "involved_dgs", "involved_nodes", "escalations", "messages",
                 "p_loss", "q_loss")
COMPARE_METRICS = ("involved_dgs", "involved_nodes", "p_loss", "q_loss", "resolved", "escalations")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioEvent:
    round: int
    kind: str
    dg: int | None = None
    bus: int | None = None
    factor: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if not isinstance(self.round, int) or self.round < 0:
            raise ScenarioError(f"event round must be a non-negative int, got {self.round!r}")
        if self.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {self.kind!r}")
        if self.kind in (DG_TRIP, DG_RESTORE) and self.dg is None:
            raise ScenarioError(f"{self.kind} needs a dg id")
        if self.kind == LOAD_SCALE:
            if self.bus is None or self.factor is None:
                raise ScenarioError("load_scale needs a bus and a factor")
            if not self.factor > 0:
                raise ScenarioError(f"load factor must be positive, got {self.factor}")
        if self.kind == FORCE_EPSILON and (self.epsilon is None or not 0 < self.epsilon < 1):
            raise ScenarioError("force_epsilon needs an epsilon in (0, 1)")

    def describe(self) -> str:
        if self.kind in (DG_TRIP, DG_RESTORE):
            return f"{self.kind}:{self.dg}"
        if self.kind == LOAD_SCALE:
            return f"{self.kind}:{self.bus}x{self.factor!r}"
        return f"{self.kind}:{self.epsilon!r}"


@dataclass(frozen=True)
class SimConfig:
    mode: str = PFC
    ladder: EpsilonLadder = EpsilonLadder((0.3, 0.15, 0.1))
    limits: VoltageLimits = VoltageLimits()
    max_rounds: int = 20
    tol: float = DEFAULT_TOL
    method: str = PROPOSED

    def __post_init__(self):
        if self.mode not in (PFC, UPF):
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if self.method not in METHODS:
            raise ScenarioError(f"unknown method {self.method!r}")
        if not isinstance(self.max_rounds, int) or self.max_rounds < 1:
            raise ScenarioError("max_rounds must be at least 1")
        if not self.tol > 0:
            raise ScenarioError("tol must be positive")


@dataclass(frozen=True)
class PlanRecord:
    """One planning attempt: an LP solve, a local step, or a failed attempt."""

    subnetwork: int | None
    status: str
    lp_size: tuple[int, int]
    adjustments: dict[int, float]
    nodes: tuple[int, ...]

    @classmethod
    def from_result(cls, sid: int | None, res: RegulationPlan | Insufficient) -> "PlanRecord":
        if isinstance(res, Insufficient):
            return cls(sid, res.reason, res.lp_size, {}, ())
        return cls(sid, "optimal", res.lp_size, dict(res.adjustments), res.constrained_buses)


@dataclass
class RoundRecord:
    round: int
    epsilon: float | None
    events: tuple[str, ...]
    v: np.ndarray
    theta: np.ndarray
    violations_before: list[Violation]
    violations_after: list[Violation]
    plans: list[PlanRecord]
    escalations: int
    messages: int
    p_loss: float
    q_loss: float


@dataclass
class SimReport:
    method: str
    grid_name: str
    config: SimConfig
    events: tuple[ScenarioEvent, ...]
    rounds: list[RoundRecord] = field(default_factory=list)
    v_initial: np.ndarray | None = None
    v_disturbed: np.ndarray | None = None
    init_messages: int = 0
    message_log: list[str] = field(default_factory=list)
    resolved: bool = False
    exhausted: bool = False
    divergence: str | None = None
    initial_structure: tuple | None = None
    final_structure: tuple | None = None

    @property
    def escalations(self) -> int:
        return sum(r.escalations for r in self.rounds)

    @property
    def involved_dgs(self) -> list[int]:
        return sorted({d for r in self.rounds for p in r.plans for d in p.adjustments})

    @property
    def involved_nodes(self) -> list[int]:
        return sorted({b for r in self.rounds for p in r.plans for b in p.nodes})

    @property
    def p_loss(self) -> float:
        return self.rounds[-1].p_loss if self.rounds else float("nan")

    @property
    def q_loss(self) -> float:
        return self.rounds[-1].q_loss if self.rounds else float("nan")

    @property
    def final_v(self) -> np.ndarray | None:
        return self.rounds[-1].v if self.rounds else self.v_initial

    @property
    def total_messages(self) -> int:
        return sum(r.messages for r in self.rounds)

    @property
    def adjustments(self) -> dict[int, float]:
        """Net planned change per DG over the whole run."""
        out: dict[int, float] = {}
        for r in self.rounds:
            for p in r.plans:
                for d, x in p.adjustments.items():
                    out[d] = out.get(d, 0.0) + x
        return out


# --------------------------------------------------------------------------
# controllers


class _Proposed:
    def __init__(self, grid, sens, config):
        self.net = AgentNetwork(grid, sens, config.mode, config.ladder, config.limits)
        self.stuck = False

    @property
    def epsilon(self):
        return self.net.ed.ladder.epsilon

    def event(self, ev: ScenarioEvent, rnd: int) -> int:
        if ev.kind in (DG_TRIP, DG_RESTORE):
            self.net.set_available(ev.dg, ev.kind == DG_RESTORE, rnd)
            return 0
        if ev.kind == FORCE_EPSILON:
            return self.net.force_epsilon(ev.epsilon, rnd)
        return 0

    def act(self, grid, sol, violations, rnd):
        trace = self.net.run_round(rnd, sol.v, self.net.measure_margins(grid, sol.theta))
        plans = [PlanRecord.from_result(p.subnetwork, p.result) for p in trace.plans]
        self.stuck = self.net.exhausted
        return self.net.apply_to(grid), plans, int(trace.escalated), trace.messages


class _Global:
    epsilon = None

    def __init__(self, grid, sens, config):
        self.sens, self.config = sens, config
        self.stuck = False

    def event(self, ev, rnd):
        return 0

    def act(self, grid, sol, violations, rnd):
        self.stuck = False
        if not violations:
            return grid, [], 0, 0
        res = plan_global(self.sens, sol, violations, self.config.limits, self.config.mode, grid)
        if isinstance(res, Insufficient):
            self.stuck = True
            return grid, [PlanRecord.from_result(None, res)], 0, 0
        return apply_plan(grid, res), [PlanRecord.from_result(None, res)], 0, 0


class _Local:
    """Each DG corrects its own bus from its self-sensitivity, clamped to its surplus."""

    epsilon = None

    def __init__(self, grid, sens, config):
        self.sens, self.config = sens, config
        self.stuck = False

    def event(self, ev, rnd):
        return 0

    def act(self, grid, sol, violations, rnd):
        lim, mode = self.config.limits, self.config.mode
        a = self.sens.voltage_block(mode)
        by_bus = {v.bus: v for v in violations}
        plans = []
        for dg in grid.dgs:
            viol = by_bus.get(dg.bus)
            if viol is None or not dg.available or dg.bus not in self.sens.monitored_buses:
                continue
            self_a = float(a[self.sens.v_row(dg.bus), self.sens.col(dg.id)])
            if not self_a > 0.0:
                continue
            target = lim.v_lower if viol.kind == UNDER else lim.v_upper
            upper, lower = dg_surplus(dg, mode)
            delta = (target - viol.voltage) / self_a
            delta = min(max(delta, min(lower, 0.0)), max(upper, 0.0))
            if delta == 0.0:
                continue
            grid = grid.with_dg(apply_adjustment(dg, delta, mode))
            plans.append(PlanRecord(None, "local", (0, 0), {dg.id: delta}, (dg.bus,)))
        self.stuck = bool(violations) and not plans
        return grid, plans, 0, 0


_CONTROLLERS = {PROPOSED: _Proposed, GLOBAL: _Global, LOCAL: _Local}


# --------------------------------------------------------------------------
# round loop


def check_events(grid: GridModel, config: SimConfig, events: Sequence[ScenarioEvent]) -> None:
    dg_ids = {d.id for d in grid.dgs}
    load_buses = {ld.bus for ld in grid.loads}
    for ev in events:
        if ev.round >= config.max_rounds:
            raise ScenarioError(f"{ev.describe()}: round {ev.round} is past max_rounds={config.max_rounds}")
        if ev.kind in (DG_TRIP, DG_RESTORE) and ev.dg not in dg_ids:
            raise ScenarioError(f"{ev.describe()}: no DG {ev.dg}")
        if ev.kind == LOAD_SCALE and ev.bus not in load_buses:
            raise ScenarioError(f"{ev.describe()}: no load at bus {ev.bus}")
        if ev.kind == FORCE_EPSILON and ev.epsilon not in config.ladder.values:
            raise ScenarioError(f"{ev.describe()}: epsilon not on the ladder {config.ladder.values}")


def _apply_event(grid: GridModel, ev: ScenarioEvent) -> GridModel:
    if ev.kind in (DG_TRIP, DG_RESTORE):
        return grid.with_dg(replace(grid.dg(ev.dg), available=ev.kind == DG_RESTORE))
    if ev.kind == LOAD_SCALE:
        loads = tuple(replace(ld, p=ld.p * ev.factor, q=ld.q * ev.factor) if ld.bus == ev.bus else ld
                      for ld in grid.loads)
        return replace(grid, loads=loads)
    return grid


def _solve(grid, init, tol):
    try:
        sol = solve_power_flow(grid, init, tol=tol)
    except SingularJacobianError as exc:
        return None, f"singular Jacobian: {exc}"
    if not sol.converged:
        return None, f"power flow did not converge (mismatch {sol.mismatch_inf_norm:.3e})"
    return sol, None


def _simulate(grid: GridModel, config: SimConfig, events: Sequence[ScenarioEvent],
              method: str) -> SimReport:
    events = tuple(sorted(events, key=lambda e: e.round))
    check_events(grid, config, events)
    report = SimReport(method, grid.name, replace(config, method=method), events)
    buses = grid.monitored_buses()
    limits = config.limits

    sol, err = _solve(grid, None, config.tol)
    if sol is None:
        report.divergence = f"initial: {err}"
        return report
    report.v_initial = sol.v.copy()
    sens = compute_sensitivity(grid, sol)
    ctl = _CONTROLLERS[method](grid, sens, config)
    if method == PROPOSED:
        report.init_messages = ctl.net.init_messages
        report.initial_structure = ctl.net.decomposition.structure()
    last_event = max((e.round for e in events), default=-1)

    for rnd in range(config.max_rounds):
        due = [e for e in events if e.round == rnd]
        extra = 0
        for ev in due:
            grid = _apply_event(grid, ev)
            extra += ctl.event(ev, rnd)
        sol, err = _solve(grid, sol, config.tol)
        if sol is None:
            report.divergence = f"round {rnd}: {err}"
            break
        before = detect_violations(sol.v, buses, limits)
        if before and report.v_disturbed is None:
            report.v_disturbed = sol.v.copy()
        grid, plans, esc, msgs = ctl.act(grid, sol, before, rnd)
        after_sol, err = _solve(grid, sol, config.tol)
        if after_sol is None:
            report.divergence = f"round {rnd}: {err}"
            break
        sol = after_sol
        after = detect_violations(sol.v, buses, limits)
        p_loss, q_loss = compute_losses(grid, sol)
        report.rounds.append(RoundRecord(
            round=rnd, epsilon=ctl.epsilon, events=tuple(e.describe() for e in due),
            v=sol.v.copy(), theta=sol.theta.copy(), violations_before=before,
            violations_after=after, plans=plans, escalations=esc, messages=msgs + extra,
            p_loss=p_loss, q_loss=q_loss,
        ))
        if method == PROPOSED and ctl.net.exhausted:
            report.exhausted = True
            break
        if rnd >= last_event and (not after or ctl.stuck):
            break

    if method == PROPOSED:
        report.message_log = list(ctl.net.log)
        report.final_structure = ctl.net.decomposition.structure()
    if report.v_disturbed is None:
        report.v_disturbed = report.v_initial
    last = report.rounds[-1] if report.rounds else None
    report.resolved = (report.divergence is None and not report.exhausted and last is not None
                       and not last.violations_after)
    return report


def run_scenario(grid: GridModel, config: SimConfig, events: Sequence[ScenarioEvent]) -> SimReport:
    """Run the self-organizing multi-agent controller."""
    return _simulate(grid, config, events, PROPOSED)


def run_global_baseline(grid: GridModel, config: SimConfig, events: Sequence[ScenarioEvent]) -> SimReport:
    """One central planner over the full sensitivity matrix."""
    return _simulate(grid, config, events, GLOBAL)


def run_local_baseline(grid: GridModel, config: SimConfig, events: Sequence[ScenarioEvent]) -> SimReport:
    """Every DG regulates only its own bus; no messages, no coordination."""
    return _simulate(grid, config, events, LOCAL)


RUNNERS = {PROPOSED: run_scenario, GLOBAL: run_global_baseline, LOCAL: run_local_baseline}


def run(grid: GridModel, config: SimConfig, events: Sequence[ScenarioEvent]) -> SimReport:
    """Dispatch on ``config.method``."""
    return RUNNERS[config.method](grid, config, events)


# --------------------------------------------------------------------------
# reports


def _fmt(x: float) -> str:
    return repr(float(x))


def _ids(items) -> str:
    return " ".join(str(i) for i in items)


def round_rows(report: SimReport) -> list[list[str]]:
    rows = []
    for r in report.rounds:
        rows.append([
            str(r.round), "" if r.epsilon is None else _fmt(r.epsilon),
            _ids(v.bus for v in r.violations_before), _ids(v.bus for v in r.violations_after),
            _fmt(np.min(r.v)), _fmt(np.max(r.v)),
            str(len(r.plans)), ";".join(f"{a}x{b}" for a, b in (p.lp_size for p in r.plans)),
            _ids(sorted({d for p in r.plans for d in p.adjustments})),
            _ids(sorted({b for p in r.plans for b in p.nodes})),
            str(r.escalations), str(r.messages), _fmt(r.p_loss), _fmt(r.q_loss),
        ])
    return rows


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_csv(report: SimReport) -> str:
    return _csv(ROUND_COLUMNS, round_rows(report))


def compare(reports: dict[str, SimReport]) -> list[list[str]]:
    """Metric-by-method table; the first row is the header.

    Raises:
        ScenarioError: if the reports do not share a grid, config and events.
    """
    if not reports:
        raise ScenarioError("nothing to compare")
    items = list(reports.items())
    ref = items[0][1]
    for label, rep in items[1:]:
        same_cfg = replace(rep.config, method=ref.config.method) == ref.config
        if rep.grid_name != ref.grid_name or rep.events != ref.events or not same_cfg:
            raise ScenarioError(f"report {label!r} was run on a different scenario")
    table = [["metric", *reports]]
    for metric in COMPARE_METRICS:
        row = [metric]
        for rep in reports.values():
            if metric == "involved_dgs":
                row.append(str(len(rep.involved_dgs)))
            elif metric == "involved_nodes":
                row.append(str(len(rep.involved_nodes)))
            elif metric == "resolved":
                row.append("true" if rep.resolved else "false")
            elif metric == "escalations":
                row.append(str(rep.escalations))
            else:
                row.append(_fmt(getattr(rep, metric)))
        table.append(row)
    return table


def compare_csv(reports: dict[str, SimReport]) -> str:
    table = compare(reports)
    return _csv(table[0], table[1:])


def profile_csv(reports: dict[str, SimReport]) -> str:
    """Per-bus voltages before control and after each method."""
    first = next(iter(reports.values()))
    before = first.v_disturbed
    if before is None:
        raise ScenarioError("no voltages to report")
    header = ["bus", "v_before", *(f"v_after_{k}" for k in reports)]
    rows = []
    for b in range(len(before)):
        rows.append([str(b), _fmt(before[b]), *(_fmt(r.final_v[b]) for r in reports.values())])
    return _csv(header, rows)


def write_reports(reports: dict[str, SimReport], out_dir: str | Path) -> list[Path]:
    """Write ``report_<method>.csv``, ``comparison.csv``, ``profile.csv`` and ``messages.log``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for label, rep in reports.items():
        p = out / f"report_{label}.csv"
        p.write_text(report_csv(rep))
        written.append(p)
    for name, text in (("comparison.csv", compare_csv(reports)), ("profile.csv", profile_csv(reports))):
        p = out / name
        p.write_text(text)
        written.append(p)
    log = reports[PROPOSED].message_log if PROPOSED in reports else []
    p = out / "messages.log"
    p.write_text("".join(line + "\n" for line in log))
    written.append(p)
    return written


# --------------------------------------------------------------------------
# scenario files

_CONFIG_KEYS = {"mode", "ladder", "v_lower", "v_upper", "max_rounds", "tol", "method"}
_EVENT_KEYS = {"round", "kind", "dg", "bus", "factor", "epsilon"}


def scenario_from_dict(doc: Any) -> tuple[SimConfig, list[ScenarioEvent]]:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping with 'config' and 'events'")
    unknown = set(doc) - {"config", "events", "name", "description"}
    if unknown:
        raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
    cfg = doc.get("config") or {}
    if not isinstance(cfg, dict):
        raise ScenarioError("'config' must be a mapping")
    bad = set(cfg) - _CONFIG_KEYS
    if bad:
        raise ScenarioError(f"unknown config keys {sorted(bad)}")
    try:
        kwargs: dict[str, Any] = {}
        if "ladder" in cfg:
            kwargs["ladder"] = EpsilonLadder(tuple(float(v) for v in cfg["ladder"]))
        if "v_lower" in cfg or "v_upper" in cfg:
            kwargs["limits"] = VoltageLimits(float(cfg.get("v_lower", 0.95)), float(cfg.get("v_upper", 1.05)))
        for key in ("mode", "method"):
            if key in cfg:
                kwargs[key] = str(cfg[key])
        if "max_rounds" in cfg:
            kwargs["max_rounds"] = int(cfg["max_rounds"])
        if "tol" in cfg:
            kwargs["tol"] = float(cfg["tol"])
        config = SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"config: {exc}") from exc
    events = []
    for i, rec in enumerate(doc.get("events") or []):
        if not isinstance(rec, dict):
            raise ScenarioError(f"events[{i}] must be a mapping")
        bad = set(rec) - _EVENT_KEYS
        if bad:
            raise ScenarioError(f"events[{i}]: unknown keys {sorted(bad)}")
        try:
            events.append(ScenarioEvent(
                round=int(rec["round"]), kind=str(rec["kind"]),
                dg=None if rec.get("dg") is None else int(rec["dg"]),
                bus=None if rec.get("bus") is None else int(rec["bus"]),
                factor=None if rec.get("factor") is None else float(rec["factor"]),
                epsilon=None if rec.get("epsilon") is None else float(rec["epsilon"]),
            ))
        except KeyError as exc:
            raise ScenarioError(f"events[{i}]: missing {exc.args[0]!r}") from exc
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"events[{i}]: {exc}") from exc
    return config, events


def parse_scenario(text: str) -> tuple[SimConfig, list[ScenarioEvent]]:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML: {exc}") from exc
    return scenario_from_dict(doc)


def load_scenario(path: str | Path) -> tuple[SimConfig, list[ScenarioEvent]]:
    return parse_scenario(Path(path).read_text())


def scenario_to_dict(config: SimConfig, events: Sequence[ScenarioEvent]) -> dict:
    cfg = {"mode": config.mode, "method": config.method, "ladder": list(config.ladder.values),
           "v_lower": config.limits.v_lower, "v_upper": config.limits.v_upper,
           "max_rounds": config.max_rounds, "tol": config.tol}
    evs = []
    for e in events:
        rec: dict[str, Any] = {"round": e.round, "kind": e.kind}
        for key in ("dg", "bus", "factor", "epsilon"):
            if getattr(e, key) is not None:
                rec[key] = getattr(e, key)
        evs.append(rec)
    return {"config": cfg, "events": evs}


def dump_scenario(config: SimConfig, events: Sequence[ScenarioEvent]) -> str:
    return yaml.safe_dump(scenario_to_dict(config, events), sort_keys=False)


__all__ = [
    "ScenarioEvent", "SimConfig", "SimReport", "RoundRecord", "PlanRecord", "ScenarioError",
    "run_scenario", "run_global_baseline", "run_local_baseline", "run", "compare", "compare_csv",
    "report_csv", "profile_csv", "write_reports", "load_scenario", "parse_scenario",
    "dump_scenario", "check_events", "RUNNERS", "METHODS", "PROPOSED", "GLOBAL", "LOCAL",
]
