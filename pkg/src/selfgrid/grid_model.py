"""Per-unit network data model and the YAML network file format.

Every quantity held by a :class:`GridModel` is per-unit on ``s_base``.
Network files may give powers in MW/MVAr and line impedances in ohms;
:func:`load_grid` converts them on the way in and :func:`dump_grid` always
writes per-unit keys, so a dump/load cycle is exact.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

import yaml

SLACK = "slack"
PQ = "pq"
PRIMARY = "primary"
SECONDARY = "secondary"
PFC = "pfc"
UPF = "upf"


class GridParseError(ValueError):
    """The network file is not valid YAML or does not follow the schema."""


class GridValidationError(ValueError):
    """The network parsed but breaks one or more model invariants."""

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class DgUnavailableError(ValueError):
    """Raised when surplus is requested for a DG that is offline."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = PQ
    base_kv: float = 0.48
    level: str = SECONDARY
    v_set: float = 1.0  # slack magnitude setpoint, ignored for pq buses


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0


@dataclass(frozen=True)
class Transformer:
    """Two-winding network transformer; the tap and phase shift sit on the primary side."""

    id: int
    primary_bus: int
    secondary_bus: int
    r: float
    x: float
    tap: float = 1.0
    theta_shift: float = 0.0
    has_protector: bool = False


@dataclass(frozen=True)
class Load:
    bus: int
    p: float
    q: float


@dataclass(frozen=True)
class DgUnit:
    id: int
    bus: int
    mode: str = PFC
    p0: float = 0.0
    q0: float = 0.0
    p_cap: float = 0.0
    q_cap: float = 0.0
    q_abs_cap: float = 0.0
    available: bool = True

    @property
    def p_sur(self) -> float:
        return self.p_cap - self.p0

    @property
    def q_sur(self) -> float:
        return self.q_cap - self.q0


@dataclass(frozen=True)
class GridModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...] = ()
    transformers: tuple[Transformer, ...] = ()
    loads: tuple[Load, ...] = ()
    dgs: tuple[DgUnit, ...] = ()
    s_base: float = 1.0
    name: str = field(default="", compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.kind == SLACK)

    def dg(self, dg_id: int) -> DgUnit:
        for d in self.dgs:
            if d.id == dg_id:
                return d
        raise KeyError(f"no DG with id {dg_id}")

    def transformer(self, t_id: int) -> Transformer:
        for t in self.transformers:
            if t.id == t_id:
                return t
        raise KeyError(f"no transformer with id {t_id}")

    def with_dg(self, dg: DgUnit) -> "GridModel":
        """Return a copy with the DG of the same id replaced."""
        dgs = tuple(dg if d.id == dg.id else d for d in self.dgs)
        return replace(self, dgs=dgs)

    def secondary_buses(self) -> list[int]:
        return [b.id for b in self.buses if b.level == SECONDARY]

    def transformer_terminals(self) -> list[int]:
        out = set()
        for t in self.transformers:
            out.add(t.primary_bus)
            out.add(t.secondary_bus)
        return sorted(out)

    def monitored_buses(self) -> list[int]:
        """Secondary-level buses plus every transformer terminal, ascending."""
        return sorted(set(self.secondary_buses()) | set(self.transformer_terminals()))


def dg_surplus(dg: DgUnit, mode: str) -> tuple[float, float]:
    """Adjustment range ``(upper, lower)`` left to a DG around its setpoint.

    PFC adjusts reactive output between ``-q_abs_cap`` and ``q_cap``; UPF adjusts
    active output between zero and ``p_cap``.
    """
    if not dg.available:
        raise DgUnavailableError(f"DG {dg.id} is unavailable and must be excluded")
    if mode == PFC:
        return dg.q_cap - dg.q0, -(dg.q_abs_cap + dg.q0)
    if mode == UPF:
        return dg.p_cap - dg.p0, -dg.p0
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# validation


def _components(n: int, edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        if 0 <= a < n and 0 <= b < n:
            adj[a].append(b)
            adj[b].append(a)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = [], deque([start])
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def _dupes(ids: Iterable[int]) -> list[int]:
    seen, dup = set(), set()
    for i in ids:
        (dup if i in seen else seen).add(i)
    return sorted(dup)


def validate(grid: GridModel) -> list[str]:
    """Check every model invariant; returns one message per violation (empty when valid)."""
    issues: list[str] = []
    ids = [b.id for b in grid.buses]
    for d in _dupes(ids):
        issues.append(f"bus {d}: duplicate bus id")
    if sorted(set(ids)) != list(range(len(set(ids)))):
        issues.append(f"bus ids are not dense 0..{len(ids) - 1}: {sorted(set(ids))}")
    known = set(ids)
    levels = {b.id: b.level for b in grid.buses}
    kinds = {b.id: b.kind for b in grid.buses}

    slacks = [b.id for b in grid.buses if b.kind == SLACK]
    if not slacks:
        issues.append("grid has no slack bus")
    elif len(slacks) > 1:
        issues.append(f"grid has {len(slacks)} slack buses: {', '.join(map(str, slacks))}")
    for b in grid.buses:
        if b.kind not in (SLACK, PQ):
            issues.append(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.level not in (PRIMARY, SECONDARY):
            issues.append(f"bus {b.id}: unknown level {b.level!r}")
        if not b.base_kv > 0:
            issues.append(f"bus {b.id}: base_kv must be positive, got {b.base_kv}")

    for d in _dupes(br.id for br in grid.branches):
        issues.append(f"branch {d}: duplicate branch id")
    for br in grid.branches:
        if br.from_bus not in known or br.to_bus not in known:
            issues.append(f"branch {br.id}: references a nonexistent bus")
        elif br.from_bus == br.to_bus:
            issues.append(f"branch {br.id}: from and to bus are both {br.from_bus}")
        if br.r == 0 and br.x == 0:
            issues.append(f"branch {br.id}: zero impedance")

    for d in _dupes(t.id for t in grid.transformers):
        issues.append(f"transformer {d}: duplicate transformer id")
    for t in grid.transformers:
        if t.primary_bus not in known or t.secondary_bus not in known:
            issues.append(f"transformer {t.id}: references a nonexistent bus")
        elif levels[t.primary_bus] != PRIMARY or levels[t.secondary_bus] != SECONDARY:
            issues.append(
                f"transformer {t.id}: primary bus {t.primary_bus} must be primary-level "
                f"and secondary bus {t.secondary_bus} secondary-level"
            )
        if not t.tap > 0:
            issues.append(f"transformer {t.id}: tap must be positive, got {t.tap}")
        if t.r == 0 and t.x == 0:
            issues.append(f"transformer {t.id}: zero impedance")

    for i, ld in enumerate(grid.loads):
        if ld.bus not in known:
            issues.append(f"load {i}: bus {ld.bus} does not exist")
        elif kinds[ld.bus] != PQ:
            issues.append(f"load {i}: bus {ld.bus} is not a pq bus")

    for d in _dupes(g.id for g in grid.dgs):
        issues.append(f"dg {d}: duplicate DG id")
    for g in grid.dgs:
        if g.bus not in known:
            issues.append(f"dg {g.id}: bus {g.bus} does not exist")
        if g.mode not in (PFC, UPF):
            issues.append(f"dg {g.id}: unknown mode {g.mode!r}")
        if not 0 <= g.p0 <= g.p_cap:
            issues.append(f"dg {g.id}: p0={g.p0} outside [0, p_cap={g.p_cap}]")
        if not -g.q_abs_cap <= g.q0 <= g.q_cap:
            issues.append(f"dg {g.id}: q0={g.q0} outside [-q_abs_cap={-g.q_abs_cap}, q_cap={g.q_cap}]")

    if not (grid.s_base > 0):
        issues.append(f"s_base must be positive, got {grid.s_base}")

    n = len(grid.buses)
    if n and sorted(ids) == list(range(n)):
        edges = [(br.from_bus, br.to_bus) for br in grid.branches]
        edges += [(t.primary_bus, t.secondary_bus) for t in grid.transformers]
        comps = _components(n, edges)
        if len(comps) > 1:
            anchor = slacks[0] if slacks else 0
            for comp in comps:
                if anchor not in comp:
                    issues.append(f"disconnected component: buses {comp}")
    return issues


# --------------------------------------------------------------------------
# file format

_BUS_KEYS = {"id", "kind", "base_kv", "level", "v_set"}
_BRANCH_KEYS = {"id", "from", "to", "r", "x", "b_shunt", "r_ohm", "x_ohm", "b_us"}
_TRAFO_KEYS = {"id", "primary_bus", "secondary_bus", "r", "x", "tap", "theta_shift", "has_protector"}
_LOAD_KEYS = {"bus", "p", "q", "p_mw", "q_mvar"}
_DG_KEYS = {
    "id", "bus", "mode", "available",
    "p0", "q0", "p_cap", "q_cap", "q_abs_cap",
    "p0_mw", "q0_mvar", "p_cap_mw", "q_cap_mvar", "q_abs_cap_mvar",
}


def _num(rec: dict, key: str, where: str, default: float | None = None) -> float:
    if key not in rec:
        if default is None:
            raise GridParseError(f"{where}: missing field {key!r}")
        return default
    val = rec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise GridParseError(f"{where}: field {key!r} must be a number, got {val!r}")
    val = float(val)
    if not math.isfinite(val):
        raise GridParseError(f"{where}: field {key!r} is not finite")
    return val


def _int(rec: dict, key: str, where: str) -> int:
    if key not in rec:
        raise GridParseError(f"{where}: missing field {key!r}")
    val = rec[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise GridParseError(f"{where}: field {key!r} must be an integer, got {val!r}")
    return val


def _either(rec: dict, pu_key: str, phys_key: str, scale: float, where: str,
            default: float | None = None) -> float:
    """Read a quantity given either per-unit or in physical units (divided by ``scale``)."""
    if pu_key in rec and phys_key in rec:
        raise GridParseError(f"{where}: give either {pu_key!r} or {phys_key!r}, not both")
    if phys_key in rec:
        return _num(rec, phys_key, where) / scale
    return _num(rec, pu_key, where, default)


def _records(doc: dict, section: str) -> list[dict]:
    recs = doc.get(section, []) or []
    if not isinstance(recs, list):
        raise GridParseError(f"section {section!r} must be a list")
    for i, r in enumerate(recs):
        if not isinstance(r, dict):
            raise GridParseError(f"{section}[{i}]: expected a mapping, got {r!r}")
    return recs


def _check_keys(rec: dict, allowed: set[str], where: str) -> None:
    extra = sorted(set(rec) - allowed)
    if extra:
        raise GridParseError(f"{where}: unknown field(s) {', '.join(extra)}")


def grid_from_dict(doc: Any) -> GridModel:
    """Build a GridModel from a parsed network document (no invariant checks)."""
    if not isinstance(doc, dict):
        raise GridParseError("network document must be a mapping at top level")
    s_base = _num(doc, "s_base", "network")
    buses = []
    for i, rec in enumerate(_records(doc, "buses")):
        where = f"buses[{i}]"
        _check_keys(rec, _BUS_KEYS, where)
        buses.append(Bus(
            id=_int(rec, "id", where),
            kind=str(rec.get("kind", PQ)),
            base_kv=_num(rec, "base_kv", where),
            level=str(rec.get("level", SECONDARY)),
            v_set=_num(rec, "v_set", where, 1.0),
        ))
    kv = {b.id: b.base_kv for b in buses}

    branches = []
    for i, rec in enumerate(_records(doc, "branches")):
        where = f"branches[{i}]"
        _check_keys(rec, _BRANCH_KEYS, where)
        f, t = _int(rec, "from", where), _int(rec, "to", where)
        z_base = kv.get(f, 1.0) ** 2 / s_base
        branches.append(Branch(
            id=_int(rec, "id", where), from_bus=f, to_bus=t,
            r=_either(rec, "r", "r_ohm", z_base, where),
            x=_either(rec, "x", "x_ohm", z_base, where),
            b_shunt=_either(rec, "b_shunt", "b_us", 1e6 / z_base, where, 0.0),
        ))

    transformers = []
    for i, rec in enumerate(_records(doc, "transformers")):
        where = f"transformers[{i}]"
        _check_keys(rec, _TRAFO_KEYS, where)
        prot = rec.get("has_protector", False)
        if not isinstance(prot, bool):
            raise GridParseError(f"{where}: has_protector must be true or false")
        transformers.append(Transformer(
            id=_int(rec, "id", where),
            primary_bus=_int(rec, "primary_bus", where),
            secondary_bus=_int(rec, "secondary_bus", where),
            r=_num(rec, "r", where), x=_num(rec, "x", where),
            tap=_num(rec, "tap", where, 1.0),
            theta_shift=_num(rec, "theta_shift", where, 0.0),
            has_protector=prot,
        ))

    loads = []
    for i, rec in enumerate(_records(doc, "loads")):
        where = f"loads[{i}]"
        _check_keys(rec, _LOAD_KEYS, where)
        loads.append(Load(
            bus=_int(rec, "bus", where),
            p=_either(rec, "p", "p_mw", s_base, where),
            q=_either(rec, "q", "q_mvar", s_base, where, 0.0),
        ))

    dgs = []
    for i, rec in enumerate(_records(doc, "dgs")):
        where = f"dgs[{i}]"
        _check_keys(rec, _DG_KEYS, where)
        avail = rec.get("available", True)
        if not isinstance(avail, bool):
            raise GridParseError(f"{where}: available must be true or false")
        dgs.append(DgUnit(
            id=_int(rec, "id", where), bus=_int(rec, "bus", where),
            mode=str(rec.get("mode", PFC)),
            p0=_either(rec, "p0", "p0_mw", s_base, where, 0.0),
            q0=_either(rec, "q0", "q0_mvar", s_base, where, 0.0),
            p_cap=_either(rec, "p_cap", "p_cap_mw", s_base, where, 0.0),
            q_cap=_either(rec, "q_cap", "q_cap_mvar", s_base, where, 0.0),
            q_abs_cap=_either(rec, "q_abs_cap", "q_abs_cap_mvar", s_base, where, 0.0),
            available=avail,
        ))
    return GridModel(
        buses=tuple(buses), branches=tuple(branches), transformers=tuple(transformers),
        loads=tuple(loads), dgs=tuple(dgs), s_base=s_base, name=str(doc.get("name", "")),
    )


def grid_to_dict(grid: GridModel) -> dict:
    """Inverse of :func:`grid_from_dict`, always emitting per-unit fields."""
    doc: dict[str, Any] = {"s_base": grid.s_base}
    if grid.name:
        doc["name"] = grid.name
    doc["buses"] = [
        {"id": b.id, "kind": b.kind, "base_kv": b.base_kv, "level": b.level, "v_set": b.v_set}
        for b in grid.buses
    ]
    doc["branches"] = [
        {"id": br.id, "from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
         "b_shunt": br.b_shunt}
        for br in grid.branches
    ]
    doc["transformers"] = [
        {"id": t.id, "primary_bus": t.primary_bus, "secondary_bus": t.secondary_bus,
         "r": t.r, "x": t.x, "tap": t.tap, "theta_shift": t.theta_shift,
         "has_protector": t.has_protector}
        for t in grid.transformers
    ]
    doc["loads"] = [{"bus": ld.bus, "p": ld.p, "q": ld.q} for ld in grid.loads]
    doc["dgs"] = [
        {"id": g.id, "bus": g.bus, "mode": g.mode, "p0": g.p0, "q0": g.q0,
         "p_cap": g.p_cap, "q_cap": g.q_cap, "q_abs_cap": g.q_abs_cap,
         "available": g.available}
        for g in grid.dgs
    ]
    return doc


def parse_grid(text: str) -> GridModel:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise GridParseError(f"malformed network file: {exc}") from exc
    grid = grid_from_dict(doc)
    issues = validate(grid)
    if issues:
        raise GridValidationError(issues)
    return grid


def load_grid(path: str | Path) -> GridModel:
    """Read, convert to per-unit and validate a network file."""
    return parse_grid(Path(path).read_text())


def dump_grid(grid: GridModel, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(grid_to_dict(grid), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
