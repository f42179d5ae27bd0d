"""Voltage-regulation LPs for one subnetwork and their translation into setpoints.

The linear voltage model is ``V = V0 + A @ x`` where ``x`` holds the change in
each involved DG's reactive (PFC) or active (UPF) output and ``A`` is the
matching sensitivity block.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .decomposition import Decomposition, Subnetwork
from .grid_model import PFC, UPF, DgUnit, GridModel, Transformer, dg_surplus
from .lp_solver import GE, LE, MAXIMIZE_MIN, MINIMIZE_MAX, Constraint, LpProblem, solve
from .power_flow import PowerFlowSolution, SensitivityMatrix

UNDER = "under"
OVER = "over"

BOUND_TOL = 1e-9

# reasons carried by Insufficient and by escalation messages
INFEASIBLE = "infeasible"
DG_UNAVAILABLE = "dg_unavailable"
UNCONTROLLABLE = "uncontrollable"


class PlanBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class VoltageLimits:
    v_lower: float = 0.95
    v_upper: float = 1.05

    def __post_init__(self):
        if not 0.0 < self.v_lower < self.v_upper:
            raise ValueError(f"invalid voltage limits ({self.v_lower}, {self.v_upper})")

    def contains(self, v: float) -> bool:
        return self.v_lower <= v <= self.v_upper


@dataclass(frozen=True)
class Violation:
    bus: int
    voltage: float
    kind: str

    def consistent_with(self, limits: VoltageLimits) -> bool:
        if self.kind == UNDER:
            return self.voltage < limits.v_lower
        return self.kind == OVER and self.voltage > limits.v_upper


def check_voltage(bus: int, v: float, limits: VoltageLimits) -> Violation | None:
    """Violation record if ``v`` lies strictly outside the closed band."""
    if v < limits.v_lower:
        return Violation(bus, float(v), UNDER)
    if v > limits.v_upper:
        return Violation(bus, float(v), OVER)
    return None


def detect_violations(v: np.ndarray, buses: Iterable[int], limits: VoltageLimits) -> list[Violation]:
    out = []
    for b in buses:
        viol = check_voltage(b, float(v[b]), limits)
        if viol is not None:
            out.append(viol)
    return out


@dataclass(frozen=True)
class RegulationPlan:
    mode: str
    kind: str
    adjustments: dict[int, float]
    predicted_v: dict[int, float]
    lp_size: tuple[int, int]
    objective_value: float
    constrained_buses: tuple[int, ...] = ()
    protectors: tuple[int, ...] = ()

    @property
    def involved_dgs(self) -> tuple[int, ...]:
        return tuple(self.adjustments)


@dataclass(frozen=True)
class Insufficient:
    """The subnetwork cannot clear its violations on its own."""

    reason: str
    lp_size: tuple[int, int] = (0, 0)
    detail: str = field(default="", compare=False)


def closest_dgs(dec: Decomposition, bus: int) -> list[int]:
    """DGs whose influence range contains ``bus``, ascending; empty if none."""
    return sorted(d for d, buses in dec.influence.items() if bus in buses)


def violation_kind(violations: Sequence[Violation]) -> str:
    """Direction to regulate in; the largest excursion wins when kinds are mixed."""
    if all(v.kind == UNDER for v in violations):
        return UNDER
    if all(v.kind == OVER for v in violations):
        return OVER
    worst = max(violations, key=lambda v: abs(v.voltage - 1.0))
    return worst.kind


def objective_for(mode: str, kind: str) -> str:
    if mode == PFC and kind == UNDER:
        return MINIMIZE_MAX
    return MAXIMIZE_MIN


def constrained_buses(dec: Decomposition, violations: Sequence[Violation],
                      dgs: Sequence[int]) -> list[int]:
    """Union of the involved DGs' influence ranges and the violating buses."""
    buses = {v.bus for v in violations}
    for d in dgs:
        buses |= dec.influence[d]
    return sorted(buses)


def protector_transformers(grid: GridModel, transformer_ids: Iterable[int]) -> list[int]:
    ids = set(transformer_ids)
    return sorted(t.id for t in grid.transformers if t.id in ids and t.has_protector)


def adjustment_range(upper: float, lower: float, kind: str) -> tuple[float, float]:
    """Sign-restricted (lower, upper) range given a DG's surplus bounds."""
    if kind == UNDER:
        return 0.0, max(upper, 0.0)
    return min(lower, 0.0), 0.0


def assemble_lp(rows: Sequence[Sequence[float]], v0: Sequence[float],
                surplus: Sequence[tuple[float, float]], protectors: Sequence[tuple[Sequence[float], float]],
                limits: VoltageLimits, mode: str, kind: str) -> LpProblem:
    """LP from explicit data.

    Args:
        rows: Sensitivity row per constrained bus, one entry per DG.
        v0: Present voltage of every constrained bus.
        surplus: ``(upper, lower)`` surplus bounds per DG.
        protectors: ``(coeffs, margin)`` per protector transformer, where
            ``margin`` is the present primary-minus-secondary angle net of
            the phase shift.
    """
    bounds = tuple(adjustment_range(u, l, kind) for u, l in surplus)
    cons = []
    for row, v in zip(rows, v0):
        coeffs = tuple(float(c) for c in row)
        cons.append(Constraint(coeffs, GE, limits.v_lower - float(v)))
        cons.append(Constraint(coeffs, LE, limits.v_upper - float(v)))
    for coeffs, margin in protectors:
        cons.append(Constraint(tuple(float(c) for c in coeffs), GE, -float(margin)))
    return LpProblem(len(surplus), objective_for(mode, kind), bounds, tuple(cons))


def plan_from_rows(buses: Sequence[int], dgs: Sequence[int], rows: Sequence[Sequence[float]],
                   v0: Sequence[float], surplus: Sequence[tuple[float, float]],
                   protectors: Sequence[tuple[int, Sequence[float], float]],
                   violations: Sequence[Violation], limits: VoltageLimits,
                   mode: str) -> RegulationPlan | Insufficient:
    """Solve the regulation LP for already-gathered data.

    ``protectors`` holds ``(transformer id, coeffs, margin)`` triples. Every
    planner in the package funnels through here, so a given set of inputs
    yields bitwise the same plan whoever assembles it.
    """
    kind = violation_kind(violations)
    problem = assemble_lp(rows, v0, surplus, [(c, m) for _, c, m in protectors], limits, mode, kind)
    res = solve(problem)
    if res.status != "optimal":
        return Insufficient(INFEASIBLE, problem.size, res.status)
    pred = {}
    for b, row, v in zip(buses, rows, v0):
        acc = float(v)
        for c, xv in zip(row, res.x):
            acc += float(c) * xv
        pred[int(b)] = acc
    return RegulationPlan(
        mode=mode, kind=kind, adjustments={int(d): float(v) for d, v in zip(dgs, res.x)},
        predicted_v=pred, lp_size=problem.size, objective_value=res.objective_value,
        constrained_buses=tuple(int(b) for b in buses),
        protectors=tuple(int(t) for t, _, _ in protectors),
    )


def protector_row(sens: SensitivityMatrix, t: Transformer, dgs: Sequence[int],
                  mode: str) -> tuple[float, ...]:
    """Change of (primary - secondary) angle per unit adjustment of each DG."""
    theta = sens.theta_block(mode)
    rp, rs = sens.theta_row(t.primary_bus), sens.theta_row(t.secondary_bus)
    return tuple(float(theta[rp, sens.col(d)] - theta[rs, sens.col(d)]) for d in dgs)


def protector_margin(grid: GridModel, theta: np.ndarray, tid: int) -> float:
    t = grid.transformer(tid)
    return float(theta[t.primary_bus] - theta[t.secondary_bus] - t.theta_shift)


def _local_inputs(sub, dec, sens, sol, violations, dgs, mode, grid):
    buses = constrained_buses(dec, violations, dgs)
    rpos = {b: i for i, b in enumerate(dec.row_buses)}
    cpos = {d: j for j, d in enumerate(dec.col_dgs)}
    rows = [tuple(float(dec.retained[rpos[b], cpos[d]]) for d in dgs) for b in buses]
    v0 = [float(sol.v[b]) for b in buses]
    surplus = [dg_surplus(grid.dg(d), mode) for d in dgs]
    prot = [(tid, protector_row(sens, grid.transformer(tid), dgs, mode), protector_margin(grid, sol.theta, tid))
            for tid in protector_transformers(grid, sub.transformer_ids)]
    return buses, rows, v0, surplus, prot


def build_lp(sub: Subnetwork, dec: Decomposition, sens: SensitivityMatrix,
             sol: PowerFlowSolution, violations: Sequence[Violation], dgs: Sequence[int],
             limits: VoltageLimits, mode: str, grid: GridModel) -> LpProblem:
    """Regulation LP for one subnetwork using its retained sensitivities.

    One variable per involved DG; two voltage rows per constrained bus and one
    row per protector transformer of the subnetwork.
    """
    if not dgs:
        raise ValueError("at least one involved DG is required")
    for d in dgs:
        if d not in sub.dg_ids:
            raise ValueError(f"DG {d} is not in subnetwork {sub.id}")
        if not grid.dg(d).available:
            raise ValueError(f"DG {d} is unavailable")
    buses, rows, v0, surplus, prot = _local_inputs(sub, dec, sens, sol, violations, dgs, mode, grid)
    return assemble_lp(rows, v0, surplus, [(c, m) for _, c, m in prot], limits, mode,
                       violation_kind(violations))


def involved_dgs(dec: Decomposition, violations: Sequence[Violation], grid: GridModel,
                 offline: Iterable[int] = ()) -> list[int] | Insufficient:
    """Available closest DGs of every violating bus, or the reason there are none."""
    off = set(offline)
    chosen: set[int] = set()
    for v in violations:
        near = closest_dgs(dec, v.bus)
        if not near:
            return Insufficient(UNCONTROLLABLE, detail=f"bus {v.bus}")
        live = [d for d in near if d not in off and grid.dg(d).available]
        if not live:
            return Insufficient(DG_UNAVAILABLE, detail=f"bus {v.bus}")
        chosen.update(live)
    return sorted(chosen)


def plan_regulation(sub: Subnetwork, dec: Decomposition, sens: SensitivityMatrix,
                    sol: PowerFlowSolution, violations: Sequence[Violation],
                    dgs: Sequence[int] | None, limits: VoltageLimits, mode: str,
                    grid: GridModel) -> RegulationPlan | Insufficient:
    """Solve the subnetwork LP; ``dgs=None`` picks the available closest DGs."""
    if dgs is None:
        picked = involved_dgs(dec, violations, grid)
        if isinstance(picked, Insufficient):
            return picked
        dgs = picked
    dgs = [d for d in dgs if grid.dg(d).available]
    if not dgs:
        return Insufficient(DG_UNAVAILABLE)
    buses, rows, v0, surplus, prot = _local_inputs(sub, dec, sens, sol, violations, dgs, mode, grid)
    return plan_from_rows(buses, dgs, rows, v0, surplus, prot, violations, limits, mode)


def plan_global(sens: SensitivityMatrix, sol: PowerFlowSolution, violations: Sequence[Violation],
                limits: VoltageLimits, mode: str, grid: GridModel) -> RegulationPlan | Insufficient:
    """Centralized plan over the full sensitivity block.

    Candidates are the available DGs with a nonzero sensitivity at some
    violating bus; every monitored bus they reach is constrained, and every
    protector transformer in the grid is enforced.
    """
    a = sens.voltage_block(mode)
    vrows = [sens.v_row(v.bus) for v in violations]
    dgs = [d for d in sens.dg_ids
           if grid.dg(d).available and np.any(a[vrows, sens.col(d)] != 0.0)]
    if not dgs:
        return Insufficient(DG_UNAVAILABLE)
    cols = [sens.col(d) for d in dgs]
    reach = np.any(a[:, cols] != 0.0, axis=1)
    buses = sorted(set(b for b, r in zip(sens.monitored_buses, reach) if r) | {v.bus for v in violations})
    rows = [tuple(float(a[sens.v_row(b), c]) for c in cols) for b in buses]
    v0 = [float(sol.v[b]) for b in buses]
    surplus = [dg_surplus(grid.dg(d), mode) for d in dgs]
    prot = [(tid, protector_row(sens, grid.transformer(tid), dgs, mode), protector_margin(grid, sol.theta, tid))
            for tid in protector_transformers(grid, [t.id for t in grid.transformers])]
    return plan_from_rows(buses, dgs, rows, v0, surplus, prot, violations, limits, mode)


def apply_adjustment(dg: DgUnit, delta: float, mode: str) -> DgUnit:
    """Shift one DG setpoint by ``delta``; rejects moves beyond its surplus."""
    upper, lower = dg_surplus(dg, mode)
    if delta > upper + BOUND_TOL or delta < lower - BOUND_TOL:
        raise PlanBoundsError(f"DG {dg.id}: adjustment {delta:+.9g} outside [{lower:.9g}, {upper:.9g}]")
    if mode == PFC:
        q = min(max(dg.q0 + delta, -dg.q_abs_cap), dg.q_cap)
        return replace(dg, q0=q)
    if mode == UPF:
        p = min(max(dg.p0 + delta, 0.0), dg.p_cap)
        return replace(dg, p0=p)
    raise ValueError(f"unknown mode {mode!r}")


def apply_plan(grid: GridModel, plan: RegulationPlan) -> GridModel:
    """Grid with every adjusted DG's setpoint moved by its planned amount."""
    for d, delta in plan.adjustments.items():
        if delta != 0.0:
            grid = grid.with_dg(apply_adjustment(grid.dg(d), delta, plan.mode))
    return grid


__all__ = [
    "UNDER", "OVER", "PFC", "UPF", "VoltageLimits", "Violation", "RegulationPlan", "Insufficient",
    "PlanBoundsError", "check_voltage", "detect_violations", "closest_dgs", "build_lp",
    "plan_regulation", "plan_global", "apply_plan", "apply_adjustment", "involved_dgs",
    "constrained_buses", "plan_from_rows", "assemble_lp", "protector_row", "protector_margin",
]
