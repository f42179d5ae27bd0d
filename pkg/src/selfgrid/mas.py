"""Agents, messages and the round/tick engine of the self-organizing controller.

Four roles take part. The ED owns the epsilon ladder and the decomposition.
One VD per monitored bus reports measurements. One LPS per subnetwork plans
regulation LPs. One DG agent per unit applies setpoint changes.

Agents never read the grid. Every electrical fact reaches them in a message,
either as an assignment from the ED or as a reading passed along by a VD or DG
agent. Within a round, messages sent at tick ``k`` are delivered at tick
``k + 1``. The round ends when no message is left in flight.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .decomposition import (FINER, RESTORE_INITIAL, Decomposition, EpsilonLadder, epsilon_decompose,
                            ladder_step)
from .grid_model import PFC, UPF, DgUnit, GridModel, Transformer, dg_surplus
from .power_flow import SensitivityMatrix
from .regulation import (DG_UNAVAILABLE, UNCONTROLLABLE, Insufficient, PlanBoundsError,
                         RegulationPlan, Violation, VoltageLimits, apply_adjustment, check_voltage,
                         plan_from_rows, protector_margin, protector_row)

ED, LPS, VD, DG = "ED", "LPS", "VD", "DG"
ROLE_ORDER = {ED: 0, LPS: 1, VD: 2, DG: 3}

INFORM, REQUEST, CONFIRM, QUERY_IF, FAILURE = "inform", "request", "confirm", "query_if", "failure"
PERFORMATIVES = (INFORM, REQUEST, CONFIRM, QUERY_IF, FAILURE)

LADDER_EXHAUSTED = "ladder_exhausted"
MAX_TICKS = 10_000


class MessageParseError(ValueError):
    def __init__(self, message: str, column: int):
        super().__init__(f"column {column}: {message}")
        self.column = column


class ProtocolError(RuntimeError):
    """An agent received something the protocol never produces."""


# --------------------------------------------------------------------------
# identities and message contents


@dataclass(frozen=True)
class AgentId:
    role: str
    index: int

    def __post_init__(self):
        if self.role not in ROLE_ORDER:
            raise ValueError(f"unknown agent role {self.role!r}")
        if not isinstance(self.index, int) or self.index < 0:
            raise ValueError(f"agent index must be a non-negative int, got {self.index!r}")
        if self.role == ED and self.index != 0:
            raise ValueError("the ED agent has index 0")

    def __str__(self) -> str:
        return f"{self.role}{self.index}"

    @property
    def order(self) -> tuple[int, int]:
        return ROLE_ORDER[self.role], self.index


ED_ID = AgentId(ED, 0)


def _f(x) -> float:
    return float(x)


def _num(x: float) -> str:
    return repr(float(x))


def _signed(x: float) -> str:
    return ("+" if math.copysign(1.0, x) > 0 else "") + repr(float(x))


@dataclass(frozen=True)
class VoltageReport:
    """A bus voltage; sent unprompted for a violation or as a query reply."""

    bus: int
    voltage: float

    def __post_init__(self):
        object.__setattr__(self, "voltage", _f(self.voltage))

    def encode(self) -> str:
        return f"V<{_num(self.voltage)}>"


@dataclass(frozen=True)
class ProtectorReport:
    """Angle margin ``theta_p - theta_s - theta_shift`` of one protector transformer."""

    transformer: int
    margin: float

    def __post_init__(self):
        object.__setattr__(self, "margin", _f(self.margin))

    def encode(self) -> str:
        return f"PROT<{self.transformer},{_num(self.margin)}>"


@dataclass(frozen=True)
class Adjust:
    dg: int
    delta: float
    mode: str

    def __post_init__(self):
        object.__setattr__(self, "delta", _f(self.delta))
        if self.mode not in (PFC, UPF):
            raise ValueError(f"unknown mode {self.mode!r}")

    def encode(self) -> str:
        return f"ADJ<{self.dg},{_signed(self.delta)},{'Q' if self.mode == PFC else 'P'}>"


@dataclass(frozen=True)
class DgStatus:
    """Availability and, when online and known, the ``(upper, lower)`` surplus."""

    dg: int
    available: bool
    upper: float | None = None
    lower: float | None = None

    def __post_init__(self):
        if (self.upper is None) != (self.lower is None):
            raise ValueError("surplus needs both bounds or neither")
        if self.upper is not None:
            if not self.available:
                raise ValueError("an offline DG reports no surplus")
            object.__setattr__(self, "upper", _f(self.upper))
            object.__setattr__(self, "lower", _f(self.lower))

    @property
    def surplus(self) -> tuple[float, float] | None:
        return None if self.upper is None else (self.upper, self.lower)

    def encode(self) -> str:
        if not self.available:
            return f"STAT<{self.dg},off>"
        if self.upper is None:
            return f"STAT<{self.dg},on>"
        return f"STAT<{self.dg},on,{_num(self.upper)},{_num(self.lower)}>"


@dataclass(frozen=True)
class EscalationRequest:
    reason: str

    def __post_init__(self):
        if not re.fullmatch(r"[a-z_]+", self.reason):
            raise ValueError(f"invalid escalation reason {self.reason!r}")

    def encode(self) -> str:
        return f"ESC<{self.reason}>"


@dataclass(frozen=True)
class ReorganizeNotice:
    """New epsilon in force; ``subnetwork`` tells a DG agent which LPS it now answers to."""

    epsilon: float
    subnetwork: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "epsilon", _f(self.epsilon))

    def encode(self) -> str:
        if self.subnetwork is None:
            return f"ORG<{_num(self.epsilon)}>"
        return f"ORG<{_num(self.epsilon)},{self.subnetwork}>"


@dataclass(frozen=True)
class RestoreRequest:
    def encode(self) -> str:
        return "RST<>"


@dataclass(frozen=True)
class MeasureRequest:
    def encode(self) -> str:
        return "MEAS<>"


@dataclass(frozen=True)
class SubnetworkAssignment:
    """Subnetwork membership, plus for an LPS the knowledge it plans with.

    ``rows[i][j]`` is the retained sensitivity of ``buses[i]`` to ``dgs[j]``.
    Each protector entry is ``(transformer id, terminal bus whose VD measures
    it, angle coefficients per DG)``. A VD assignment carries only the
    subnetwork id, which is ``None`` for an uncontrollable bus.
    """

    subnetwork: int | None
    dgs: tuple[int, ...] = ()
    buses: tuple[int, ...] = ()
    rows: tuple[tuple[float, ...], ...] = ()
    protectors: tuple[tuple[int, int, tuple[float, ...]], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dgs", tuple(int(d) for d in self.dgs))
        object.__setattr__(self, "buses", tuple(int(b) for b in self.buses))
        rows = tuple(tuple(_f(v) for v in r) for r in self.rows)
        prot = tuple((int(t), int(b), tuple(_f(v) for v in c)) for t, b, c in self.protectors)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "protectors", prot)
        if len(rows) != len(self.buses):
            raise ValueError("one sensitivity row per bus is required")
        n = len(self.dgs)
        if any(len(r) != n for r in rows) or any(len(c) != n for _, _, c in prot):
            raise ValueError("every row needs one entry per DG")
        if self.subnetwork is None and (self.dgs or self.buses or prot):
            raise ValueError("an uncontrollable assignment carries no members")

    @property
    def is_short(self) -> bool:
        return not (self.dgs or self.buses or self.protectors)

    def encode(self) -> str:
        sid = "none" if self.subnetwork is None else str(self.subnetwork)
        if self.is_short:
            return f"ASG<{sid}>"
        rows = "/".join(",".join(_num(v) for v in r) for r in self.rows)
        prot = "/".join(f"{t}:{b}:" + ",".join(_num(v) for v in c) for t, b, c in self.protectors)
        return (f"ASG<{sid};{','.join(map(str, self.dgs))};{','.join(map(str, self.buses))};"
                f"{rows};{prot}>")


CONTENT_TYPES = (VoltageReport, ProtectorReport, Adjust, DgStatus, EscalationRequest,
                 ReorganizeNotice, RestoreRequest, MeasureRequest, SubnetworkAssignment)


@dataclass(frozen=True)
class Message:
    performative: str
    sender: AgentId
    destination: AgentId
    time: int
    content: object

    def __post_init__(self):
        if self.performative not in PERFORMATIVES:
            raise ValueError(f"unknown performative {self.performative!r}")
        if not isinstance(self.time, int) or self.time < 0:
            raise ValueError("message time must be a non-negative int")
        if not isinstance(self.content, CONTENT_TYPES):
            raise TypeError(f"unsupported content {type(self.content).__name__}")
        if isinstance(self.content, VoltageReport):
            if self.sender != AgentId(VD, self.content.bus):
                raise ValueError("a voltage report must come from the VD of its bus")

    def __str__(self) -> str:
        return encode_message(self)


def encode_message(m: Message) -> str:
    return (f"message ({m.performative}, {m.sender}, {m.destination}, {m.time}, "
            f"{m.content.encode()})")


# --------------------------------------------------------------------------
# decoding

_FLOAT = re.compile(r"[+-]?(?:\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|inf|nan)")
_INT = re.compile(r"\d+")
_PERF = re.compile(r"[a-z_]+")
_AGENT = re.compile(r"(ED|LPS|VD|DG)(\d+)")
_TAG = re.compile(r"[A-Z]+")


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, what: str, at: int | None = None):
        raise MessageParseError(what, (self.pos if at is None else at) + 1)

    def literal(self, s: str) -> None:
        if not self.text.startswith(s, self.pos):
            self.fail(f"expected {s!r}")
        self.pos += len(s)

    def token(self, pattern: re.Pattern, what: str) -> re.Match:
        m = pattern.match(self.text, self.pos)
        if m is None:
            self.fail(f"expected {what}")
        self.pos = m.end()
        return m


def _split(body: str, sep: str, base: int) -> list[tuple[str, int]]:
    """Pieces of ``body`` split on ``sep`` with the column offset of each."""
    out, start = [], 0
    for piece in body.split(sep):
        out.append((piece, base + start))
        start += len(piece) + len(sep)
    return out


def _float(piece: str, col: int) -> float:
    if not _FLOAT.fullmatch(piece):
        raise MessageParseError(f"expected a number, got {piece!r}", col + 1)
    return float(piece)


def _int(piece: str, col: int) -> int:
    if not _INT.fullmatch(piece):
        raise MessageParseError(f"expected an integer, got {piece!r}", col + 1)
    return int(piece)


def _arity(parts: list, n: int | tuple[int, ...], tag: str, col: int) -> None:
    ok = n if isinstance(n, tuple) else (n,)
    if len(parts) not in ok:
        raise MessageParseError(f"{tag} takes {' or '.join(map(str, ok))} field(s), got {len(parts)}",
                                col + 1)


def _floats(piece: str, col: int) -> tuple[float, ...]:
    return tuple(_float(p, c) for p, c in _split(piece, ",", col)) if piece else ()


def _ints(piece: str, col: int) -> tuple[int, ...]:
    return tuple(_int(p, c) for p, c in _split(piece, ",", col)) if piece else ()


def _decode_content(tag: str, body: str, col: int, sender: AgentId):
    if tag in ("RST", "MEAS"):
        if body:
            raise MessageParseError(f"{tag} takes no fields", col + 1)
        return RestoreRequest() if tag == "RST" else MeasureRequest()
    if tag == "V":
        if sender.role != VD:
            raise MessageParseError("V content must come from a VD agent", col + 1)
        return VoltageReport(sender.index, _float(body, col))
    if tag == "ESC":
        if not re.fullmatch(r"[a-z_]+", body):
            raise MessageParseError(f"invalid reason {body!r}", col + 1)
        return EscalationRequest(body)
    if tag == "ASG":
        return _decode_assignment(body, col)
    parts = _split(body, ",", col)
    if tag == "PROT":
        _arity(parts, 2, tag, col)
        return ProtectorReport(_int(*parts[0]), _float(*parts[1]))
    if tag == "ADJ":
        _arity(parts, 3, tag, col)
        (dg, c0), (delta, c1), (mode, c2) = parts
        if not delta or delta[0] not in "+-":
            raise MessageParseError("adjustment must carry an explicit sign", c1 + 1)
        if mode not in ("Q", "P"):
            raise MessageParseError(f"unknown adjustment mode {mode!r}", c2 + 1)
        return Adjust(_int(dg, c0), _float(delta, c1), PFC if mode == "Q" else UPF)
    if tag == "STAT":
        _arity(parts, (2, 4), tag, col)
        flag, fc = parts[1]
        if flag not in ("on", "off"):
            raise MessageParseError(f"expected on or off, got {flag!r}", fc + 1)
        if len(parts) == 4:
            if flag == "off":
                raise MessageParseError("an offline DG reports no surplus", fc + 1)
            return DgStatus(_int(*parts[0]), True, _float(*parts[2]), _float(*parts[3]))
        return DgStatus(_int(*parts[0]), flag == "on")
    if tag == "ORG":
        _arity(parts, (1, 2), tag, col)
        sid = _int(*parts[1]) if len(parts) == 2 else None
        return ReorganizeNotice(_float(*parts[0]), sid)
    raise MessageParseError(f"unknown content tag {tag!r}", col - len(tag))


def _decode_assignment(body: str, col: int) -> SubnetworkAssignment:
    fields = _split(body, ";", col)
    _arity(fields, (1, 5), "ASG", col)
    sid_text, sc = fields[0]
    sid = None if sid_text == "none" else _int(sid_text, sc)
    if len(fields) == 1:
        return SubnetworkAssignment(sid)
    (_, _), (dgs, dc), (buses, bc), (rows, rc), (prot, pc) = fields
    row_vals = tuple(_floats(r, c) for r, c in _split(rows, "/", rc)) if rows else ()
    prots = []
    if prot:
        for entry, ec in _split(prot, "/", pc):
            bits = _split(entry, ":", ec)
            _arity(bits, 3, "protector entry", ec)
            prots.append((_int(*bits[0]), _int(*bits[1]), _floats(*bits[2])))
    try:
        return SubnetworkAssignment(sid, _ints(dgs, dc), _ints(buses, bc), row_vals, tuple(prots))
    except ValueError as exc:
        raise MessageParseError(str(exc), col + 1) from exc


def decode_message(text: str) -> Message:
    """Parse one encoded line; errors name the 1-based column where parsing stopped."""
    cur = _Cursor(text.rstrip("\n"))
    cur.literal("message (")
    at = cur.pos
    perf = cur.token(_PERF, "performative").group()
    if perf not in PERFORMATIVES:
        cur.fail(f"unknown performative {perf!r}", at)
    agents = []
    for _ in range(2):
        cur.literal(", ")
        at = cur.pos
        m = cur.token(_AGENT, "agent id")
        try:
            agents.append(AgentId(m.group(1), int(m.group(2))))
        except ValueError as exc:
            cur.fail(str(exc), at)
    cur.literal(", ")
    time = int(cur.token(_INT, "time").group())
    cur.literal(", ")
    tag = cur.token(_TAG, "content tag").group()
    cur.literal("<")
    close = cur.text.find(">", cur.pos)
    if close < 0:
        cur.fail("unterminated content")
    body, body_col = cur.text[cur.pos:close], cur.pos
    cur.pos = close + 1
    cur.literal(")")
    if cur.pos != len(cur.text):
        cur.fail("trailing characters")
    content = _decode_content(tag, body, body_col, agents[0])
    try:
        return Message(perf, agents[0], agents[1], time, content)
    except (TypeError, ValueError) as exc:
        raise MessageParseError(str(exc), 1) from exc


def _msg(perf: str, sender: AgentId, dest: AgentId, time: int, content) -> Message:
    return Message(perf, sender, dest, time, content)


# --------------------------------------------------------------------------
# agent states


@dataclass
class EdState:
    """The ED's view: the ladder, the current decomposition, and pending requests.

    The ED keeps the sensitivity matrix it decomposes and the transformer list
    it needs to describe protector constraints.
    """

    ladder: EpsilonLadder
    decomposition: Decomposition
    mode: str
    sens: SensitivityMatrix
    transformers: tuple[Transformer, ...]
    pending: str | None = None
    exhausted: bool = False
    escalations: int = 0
    restores: int = 0

    def __post_init__(self):
        if self.decomposition.epsilon != self.ladder.epsilon:
            raise ValueError("decomposition epsilon differs from the ladder's current value")


@dataclass
class VdState:
    bus: int
    limits: VoltageLimits
    subnetwork: int | None = None
    protectors: tuple[int, ...] = ()
    voltage: float = math.nan
    margins: dict[int, float] = field(default_factory=dict)

    @property
    def lps(self) -> AgentId | None:
        return None if self.subnetwork is None else AgentId(LPS, self.subnetwork)

    @property
    def agent_id(self) -> AgentId:
        return AgentId(VD, self.bus)


@dataclass
class DgState:
    unit: DgUnit
    mode: str
    subnetwork: int

    @property
    def agent_id(self) -> AgentId:
        return AgentId(DG, self.unit.id)

    @property
    def lps(self) -> AgentId:
        return AgentId(LPS, self.subnetwork)

    @property
    def surplus(self) -> tuple[float, float] | None:
        return dg_surplus(self.unit, self.mode) if self.unit.available else None

    def status(self) -> DgStatus:
        s = self.surplus
        if s is None:
            return DgStatus(self.unit.id, False)
        return DgStatus(self.unit.id, True, s[0], s[1])


IDLE, MEASURING, ADJUSTING, RESETTING = "idle", "measuring", "adjusting", "resetting"


@dataclass
class PlanOutcome:
    round: int
    subnetwork: int
    result: RegulationPlan | Insufficient


@dataclass
class LpsState:
    """Local problem solver for one subnetwork.

    ``ledger`` maps an offline DG to the net adjustments other DGs made to
    cover for it; those are undone when it comes back.
    """

    subnetwork: int
    mode: str
    limits: VoltageLimits
    assigned: bool = False
    dgs: tuple[int, ...] = ()
    buses: tuple[int, ...] = ()
    rows: dict[int, tuple[float, ...]] = field(default_factory=dict)
    protectors: dict[int, tuple[int, tuple[float, ...]]] = field(default_factory=dict)
    offline: set[int] = field(default_factory=set)
    surplus: dict[int, tuple[float, float]] = field(default_factory=dict)
    readings: dict[int, float] = field(default_factory=dict)
    margins: dict[int, float] = field(default_factory=dict)
    pending: dict[int, Violation] = field(default_factory=dict)
    awaiting: set[AgentId] = field(default_factory=set)
    phase: str = IDLE
    planned_round: int = -1
    cause: int | None = None
    ledger: dict[int, dict[int, float]] = field(default_factory=dict)
    failures: list[Adjust] = field(default_factory=list)
    history: list[PlanOutcome] = field(default_factory=list)

    @property
    def agent_id(self) -> AgentId:
        return AgentId(LPS, self.subnetwork)

    def closest(self, bus: int) -> list[int]:
        row = self.rows.get(bus)
        if row is None:
            return []
        return [d for d, a in zip(self.dgs, row) if a != 0.0]

    def influence(self, dg: int) -> set[int]:
        j = self.dgs.index(dg)
        return {b for b in self.buses if self.rows[b][j] != 0.0}


# --------------------------------------------------------------------------
# ED


def _assignments(state: EdState, time: int) -> list[Message]:
    dec = state.decomposition
    rpos = {b: i for i, b in enumerate(dec.row_buses)}
    cpos = {d: j for j, d in enumerate(dec.col_dgs)}
    tmap = {t.id: t for t in state.transformers}
    out = []
    for sub in dec.subnetworks:
        dgs = tuple(sorted(sub.dg_ids))
        buses = tuple(sorted(sub.bus_ids))
        rows = tuple(tuple(float(dec.retained[rpos[b], cpos[d]]) for d in dgs) for b in buses)
        prot = []
        for tid in sorted(sub.transformer_ids):
            t = tmap[tid]
            if not t.has_protector:
                continue
            term = t.secondary_bus if t.secondary_bus in sub.bus_ids else t.primary_bus
            prot.append((tid, term, protector_row(state.sens, t, dgs, state.mode)))
        asg = SubnetworkAssignment(sub.id, dgs, buses, rows, tuple(prot))
        out.append(_msg(INFORM, ED_ID, AgentId(LPS, sub.id), time, asg))
    for b in dec.row_buses:
        sub = dec.subnetwork_of_bus(b)
        out.append(_msg(INFORM, ED_ID, AgentId(VD, b), time,
                        SubnetworkAssignment(None if sub is None else sub.id)))
    return out


def _decompose(state_sens: SensitivityMatrix, mode: str, eps: float,
               transformers: Sequence[Transformer]) -> Decomposition:
    return epsilon_decompose(state_sens.voltage_block(mode), state_sens.monitored_buses,
                             state_sens.dg_ids, eps, transformers)


def ed_initialize(grid: GridModel, sens: SensitivityMatrix, mode: str,
                  ladder: EpsilonLadder) -> tuple[EdState, list[Message]]:
    """Decompose at the ladder head and address one assignment to every LPS and VD."""
    if mode not in (PFC, UPF):
        raise ValueError(f"unknown mode {mode!r}")
    ladder = EpsilonLadder(ladder.values, 0)
    dec = _decompose(sens, mode, ladder.epsilon, grid.transformers)
    state = EdState(ladder, dec, mode, sens, tuple(grid.transformers))
    return state, _assignments(state, 0)


def ed_step(state: EdState, inbox: Sequence[Message], rnd: int) -> tuple[EdState, list[Message]]:
    """Take escalation and restore requests; the first one in a round is kept.

    The ladder move itself happens in :func:`ed_reorganize` once the round
    has gone quiet, so one round never sees more than one step.
    """
    out = []
    for m in inbox:
        c = m.content
        if isinstance(c, EscalationRequest):
            if state.exhausted:
                continue
            if state.ladder.at_bottom and state.pending is None:
                state.exhausted = True
                out.append(_msg(FAILURE, ED_ID, m.sender, rnd, EscalationRequest(LADDER_EXHAUSTED)))
            elif state.pending is None:
                state.pending = FINER
        elif isinstance(c, RestoreRequest):
            if state.pending is None and state.ladder.index > 0:
                state.pending = RESTORE_INITIAL
        else:
            raise ProtocolError(f"ED cannot handle {encode_message(m)}")
    return state, out


def ed_reorganize(state: EdState, request: str, rnd: int,
                  dg_ids: Iterable[int] = ()) -> tuple[EdState, list[Message]]:
    """Move the ladder (``finer`` or ``restore_initial``) and re-announce the partition.

    Every DG agent in ``dg_ids`` receives a notice naming its new subnetwork;
    every LPS and VD receives a fresh assignment.
    """
    ladder = ladder_step(state.ladder, request)
    dec = _decompose(state.sens, state.mode, ladder.epsilon, state.transformers)
    state = replace(state, ladder=ladder, decomposition=dec, pending=None,
                    escalations=state.escalations + (request == FINER),
                    restores=state.restores + (request == RESTORE_INITIAL))
    notices = [_msg(INFORM, ED_ID, AgentId(DG, d), rnd,
                    ReorganizeNotice(ladder.epsilon, dec.subnetwork_of_dg(d).id))
               for d in sorted(dg_ids)]
    return state, notices + _assignments(state, rnd)


def ed_force(state: EdState, epsilon: float, rnd: int,
             dg_ids: Iterable[int] = ()) -> tuple[EdState, list[Message]]:
    """Jump to the ladder rung equal to ``epsilon`` (scenario override)."""
    if epsilon not in state.ladder.values:
        raise ValueError(f"epsilon {epsilon} is not on the ladder {state.ladder.values}")
    ladder = EpsilonLadder(state.ladder.values, state.ladder.values.index(epsilon))
    dec = _decompose(state.sens, state.mode, ladder.epsilon, state.transformers)
    state = replace(state, ladder=ladder, decomposition=dec, pending=None)
    notices = [_msg(INFORM, ED_ID, AgentId(DG, d), rnd,
                    ReorganizeNotice(ladder.epsilon, dec.subnetwork_of_dg(d).id))
               for d in sorted(dg_ids)]
    return state, notices + _assignments(state, rnd)


# --------------------------------------------------------------------------
# VD


def vd_monitor(state: VdState, v_now: float, rnd: int,
               margins: dict[int, float] | None = None) -> Message | None:
    """Record the latest measurement; report it if it lies outside the limits.

    A bus outside every subnetwork has no LPS to report to, so its VD asks the
    ED for a finer partition instead.
    """
    state.voltage = float(v_now)
    if margins is not None:
        state.margins = {t: float(margins[t]) for t in state.protectors}
    if check_voltage(state.bus, state.voltage, state.limits) is None:
        return None
    if state.lps is None:
        return _msg(REQUEST, state.agent_id, ED_ID, rnd, EscalationRequest(UNCONTROLLABLE))
    return _msg(INFORM, state.agent_id, state.lps, rnd, VoltageReport(state.bus, state.voltage))


def vd_step(state: VdState, inbox: Sequence[Message], rnd: int) -> tuple[VdState, list[Message]]:
    out = []
    for m in inbox:
        c = m.content
        if isinstance(c, SubnetworkAssignment):
            state.subnetwork = c.subnetwork
        elif isinstance(c, MeasureRequest):
            out.append(_msg(INFORM, state.agent_id, m.sender, rnd, VoltageReport(state.bus, state.voltage)))
            for t in state.protectors:
                out.append(_msg(INFORM, state.agent_id, m.sender, rnd, ProtectorReport(t, state.margins[t])))
        elif isinstance(c, EscalationRequest) and m.performative == FAILURE:
            pass  # the ladder is exhausted; nothing more a VD can do
        else:
            raise ProtocolError(f"VD cannot handle {encode_message(m)}")
    return state, out


# --------------------------------------------------------------------------
# DG


def dg_event(state: DgState, available: bool, rnd: int) -> tuple[DgState, Message]:
    """Scenario trip or restore; the DG tells its LPS straight away."""
    state.unit = replace(state.unit, available=bool(available))
    return state, _msg(INFORM, state.agent_id, state.lps, rnd, state.status())


def dg_step(state: DgState, inbox: Sequence[Message], rnd: int) -> tuple[DgState, list[Message]]:
    out = []
    for m in inbox:
        c = m.content
        if isinstance(c, ReorganizeNotice):
            if c.subnetwork is not None:
                state.subnetwork = c.subnetwork
        elif isinstance(c, MeasureRequest):
            out.append(_msg(INFORM, state.agent_id, m.sender, rnd, state.status()))
        elif isinstance(c, Adjust):
            if c.dg != state.unit.id or c.mode != state.mode:
                raise ProtocolError(f"DG{state.unit.id} received {encode_message(m)}")
            try:
                if not state.unit.available:
                    raise PlanBoundsError("offline")
                state.unit = apply_adjustment(state.unit, c.delta, state.mode)
            except PlanBoundsError:
                out.append(_msg(FAILURE, state.agent_id, m.sender, rnd, c))
            else:
                out.append(_msg(CONFIRM, state.agent_id, m.sender, rnd, c))
        else:
            raise ProtocolError(f"DG cannot handle {encode_message(m)}")
    return state, out


# --------------------------------------------------------------------------
# LPS


def _install(state: LpsState, asg: SubnetworkAssignment) -> None:
    if asg.subnetwork != state.subnetwork:
        raise ProtocolError(f"LPS{state.subnetwork} got the assignment of {asg.subnetwork}")
    state.assigned = True
    state.dgs = asg.dgs
    state.buses = asg.buses
    state.rows = dict(zip(asg.buses, asg.rows))
    state.protectors = {t: (b, c) for t, b, c in asg.protectors}


def _escalate(state: LpsState, result: Insufficient, rnd: int) -> list[Message]:
    state.history.append(PlanOutcome(rnd, state.subnetwork, result))
    return [_msg(REQUEST, state.agent_id, ED_ID, rnd, EscalationRequest(result.reason))]


def _start_reset(state: LpsState, dg: int, rnd: int) -> list[Message]:
    entries = state.ledger.pop(dg, {})
    todo = [(d, -x) for d, x in sorted(entries.items())
            if x != 0.0 and d in state.dgs and d not in state.offline]
    if not todo:
        return [_msg(REQUEST, state.agent_id, ED_ID, rnd, RestoreRequest())]
    state.phase = RESETTING
    state.awaiting = {AgentId(DG, d) for d, _ in todo}
    return [_msg(REQUEST, state.agent_id, AgentId(DG, d), rnd, Adjust(d, x, state.mode)) for d, x in todo]


def lps_handle(state: LpsState, violations: Sequence[Violation], rnd: int) -> list[Message]:
    """Plan for ``violations`` or ask for what the plan still needs.

    The first call queries the VDs of every bus a candidate DG reaches and the
    candidate DGs themselves. Once all replies are in, the second call solves
    the LP and sends one adjustment per involved DG, or escalates to the ED.
    """
    if not violations or state.phase in (RESETTING, ADJUSTING):
        return []
    near = {v.bus: state.closest(v.bus) for v in violations}
    if any(not ds for ds in near.values()):
        state.pending.clear()
        state.planned_round = rnd
        return _escalate(state, Insufficient(UNCONTROLLABLE), rnd)
    live = {b: [d for d in ds if d not in state.offline] for b, ds in near.items()}
    if any(not ds for ds in live.values()):
        state.pending.clear()
        state.planned_round = rnd
        state.phase = IDLE
        return _escalate(state, Insufficient(DG_UNAVAILABLE), rnd)
    dgs = sorted(set().union(*live.values()))
    buses = {v.bus for v in violations}
    for d in dgs:
        buses |= state.influence(d)
    buses = sorted(buses)

    if state.phase != MEASURING:
        vds = set(buses) | {b for b, _ in state.protectors.values()}
        targets = [AgentId(VD, b) for b in sorted(vds)] + [AgentId(DG, d) for d in dgs]
        state.phase = MEASURING
        state.awaiting = set(targets)
        state.readings.clear()
        state.margins.clear()
        return [_msg(QUERY_IF, state.agent_id, t, rnd, MeasureRequest()) for t in targets]

    state.phase = IDLE
    state.planned_round = rnd
    state.pending.clear()
    cols = [state.dgs.index(d) for d in dgs]
    rows = [tuple(state.rows[b][j] for j in cols) for b in buses]
    v0 = [state.readings[b] for b in buses]
    surplus = [state.surplus[d] for d in dgs]
    prot = [(t, tuple(c[j] for j in cols), state.margins[t]) for t, (_, c) in sorted(state.protectors.items())]
    result = plan_from_rows(buses, dgs, rows, v0, surplus, prot, violations, state.limits, state.mode)
    if isinstance(result, Insufficient):
        return _escalate(state, result, rnd)
    state.history.append(PlanOutcome(rnd, state.subnetwork, result))
    causes = sorted(state.offline & set().union(*near.values()))
    state.cause = causes[0] if causes else None
    state.phase = ADJUSTING
    state.awaiting = {AgentId(DG, d) for d in dgs}
    return [_msg(REQUEST, state.agent_id, AgentId(DG, d), rnd, Adjust(d, x, state.mode))
            for d, x in result.adjustments.items()]


def lps_step(state: LpsState, inbox: Sequence[Message], rnd: int) -> tuple[LpsState, list[Message]]:
    """Process one tick's inbox: assignments, statuses, readings, replies, then plan."""
    out: list[Message] = []
    for m in inbox:
        if isinstance(m.content, SubnetworkAssignment):
            _install(state, m.content)
    for m in inbox:
        c = m.content
        if not isinstance(c, DgStatus):
            continue
        reply = state.phase == MEASURING and m.sender in state.awaiting
        if reply:
            state.awaiting.discard(m.sender)
        if not c.available:
            state.offline.add(c.dg)
            state.surplus.pop(c.dg, None)
            continue
        state.surplus[c.dg] = c.surplus
        if c.dg in state.offline:
            state.offline.discard(c.dg)
            if not reply:
                out += _start_reset(state, c.dg, rnd)
    for m in inbox:
        c = m.content
        if isinstance(c, VoltageReport):
            if state.phase == MEASURING and m.sender in state.awaiting:
                state.readings[c.bus] = c.voltage
                state.awaiting.discard(m.sender)
            else:
                viol = check_voltage(c.bus, c.voltage, state.limits)
                if viol is not None:
                    state.pending[c.bus] = viol
        elif isinstance(c, ProtectorReport):
            state.margins[c.transformer] = c.margin
        elif isinstance(c, Adjust):
            state.awaiting.discard(m.sender)
            if m.performative == FAILURE:
                state.failures.append(c)
            elif state.phase == ADJUSTING and state.cause is not None:
                book = state.ledger.setdefault(state.cause, {})
                book[c.dg] = book.get(c.dg, 0.0) + c.delta
        elif isinstance(c, EscalationRequest) and m.performative == FAILURE:
            pass
        elif not isinstance(c, (SubnetworkAssignment, DgStatus)):
            raise ProtocolError(f"LPS cannot handle {encode_message(m)}")
    if state.phase in (ADJUSTING, RESETTING) and not state.awaiting:
        if state.phase == RESETTING:
            out.append(_msg(REQUEST, state.agent_id, ED_ID, rnd, RestoreRequest()))
        state.phase = IDLE
        state.cause = None
    if not state.assigned:
        return state, out
    if state.phase == MEASURING:
        if not state.awaiting:
            out += lps_handle(state, list(state.pending.values()), rnd)
    elif state.phase == IDLE and state.pending and state.planned_round != rnd:
        out += lps_handle(state, [state.pending[b] for b in sorted(state.pending)], rnd)
    return state, out


# --------------------------------------------------------------------------
# engine


@dataclass
class RoundTrace:
    messages: int = 0
    plans: list[PlanOutcome] = field(default_factory=list)
    escalated: bool = False
    restored: bool = False


class AgentNetwork:
    """Owns every agent and moves messages between them, tick by tick.

    Each tick delivers every message in flight, sorted by destination, then
    sender (role order ED, LPS, VD, DG, then index), then send order. Agents
    are stepped in the same destination order and their replies go out on the
    next tick. ``log`` holds one encoded line per delivery.
    """

    def __init__(self, grid: GridModel, sens: SensitivityMatrix, mode: str, ladder: EpsilonLadder,
                 limits: VoltageLimits, max_ticks: int = MAX_TICKS):
        self.mode = mode
        self.limits = limits
        self.max_ticks = max_ticks
        self.log: list[str] = []
        self._queue: list[Message] = []
        self.ed, init = ed_initialize(grid, sens, mode, ladder)
        dec = self.ed.decomposition
        self.transformers = tuple(grid.transformers)
        prot_at: dict[int, list[int]] = {}
        for t in grid.transformers:
            if t.has_protector:
                for b in (t.primary_bus, t.secondary_bus):
                    prot_at.setdefault(b, []).append(t.id)
        self.vds = {b: VdState(b, limits, protectors=tuple(sorted(prot_at.get(b, ()))))
                    for b in sens.monitored_buses}
        self.dgs = {g.id: DgState(g, mode, dec.subnetwork_of_dg(g.id).id) for g in grid.dgs}
        self.lps = {s.id: LpsState(s.id, mode, limits) for s in dec.subnetworks}
        self.init_messages = self._deliver(init, 0)

    @property
    def decomposition(self) -> Decomposition:
        return self.ed.decomposition

    @property
    def exhausted(self) -> bool:
        return self.ed.exhausted

    def _agent(self, aid: AgentId):
        table = {LPS: self.lps, VD: self.vds, DG: self.dgs}.get(aid.role)
        if aid.role == ED:
            return self.ed
        if table is None or aid.index not in table:
            raise ProtocolError(f"no agent {aid}")
        return table[aid.index]

    def _step(self, aid: AgentId, inbox: list[Message], rnd: int) -> list[Message]:
        if aid.role == ED:
            self.ed, out = ed_step(self.ed, inbox, rnd)
        elif aid.role == LPS:
            _, out = lps_step(self.lps[aid.index], inbox, rnd)
        elif aid.role == VD:
            _, out = vd_step(self.vds[aid.index], inbox, rnd)
        else:
            _, out = dg_step(self.dgs[aid.index], inbox, rnd)
        return out

    def _deliver(self, queue: list[Message], rnd: int) -> int:
        count = 0
        for _ in range(self.max_ticks):
            if not queue:
                return count
            batch = sorted(queue, key=lambda m: (m.destination.order, m.sender.order))
            queue = []
            for m in batch:
                self._agent(m.destination)
                self.log.append(encode_message(m))
            count += len(batch)
            i = 0
            while i < len(batch):
                j = i
                while j < len(batch) and batch[j].destination == batch[i].destination:
                    j += 1
                queue.extend(self._step(batch[i].destination, batch[i:j], rnd))
                i = j
        raise ProtocolError(f"no quiescence after {self.max_ticks} ticks")

    def _regroup(self) -> None:
        """Replace the LPS agents after a reorganization, carrying outage knowledge over."""
        dec = self.ed.decomposition
        fresh = {s.id: LpsState(s.id, self.mode, self.limits) for s in dec.subnetworks}
        for old in self.lps.values():
            for o in old.offline:
                new = fresh[dec.subnetwork_of_dg(o).id]
                new.offline.add(o)
                members = dec.subnetwork_of_dg(o).dg_ids
                book = {d: x for d, x in old.ledger.get(o, {}).items() if d in members}
                if book:
                    new.ledger[o] = book
        self.lps = fresh

    def set_available(self, dg: int, available: bool, rnd: int) -> None:
        _, m = dg_event(self.dgs[dg], available, rnd)
        self._queue.append(m)

    def force_epsilon(self, epsilon: float, rnd: int) -> int:
        self.ed, msgs = ed_force(self.ed, epsilon, rnd, self.dgs)
        self._regroup()
        return self._deliver(msgs, rnd)

    def run_round(self, rnd: int, v, margins: dict[int, float]) -> RoundTrace:
        """One regulation round against measured voltages ``v`` (indexed by bus)."""
        trace = RoundTrace()
        queue, self._queue = self._queue, []
        for b in sorted(self.vds):
            m = vd_monitor(self.vds[b], float(v[b]), rnd, margins)
            if m is not None:
                queue.append(m)
        trace.messages = self._deliver(queue, rnd)
        for s in sorted(self.lps):
            trace.plans += [p for p in self.lps[s].history if p.round == rnd]
        if self.ed.pending is not None:
            request = self.ed.pending
            self.ed, msgs = ed_reorganize(self.ed, request, rnd, self.dgs)
            trace.escalated = request == FINER
            trace.restored = request == RESTORE_INITIAL
            self._regroup()
            trace.messages += self._deliver(msgs, rnd)
        return trace

    def apply_to(self, grid: GridModel) -> GridModel:
        """Grid with every DG set to what its agent currently holds."""
        return replace(grid, dgs=tuple(self.dgs[g.id].unit for g in grid.dgs))

    def measure_margins(self, grid: GridModel, theta) -> dict[int, float]:
        return {t.id: protector_margin(grid, theta, t.id) for t in self.transformers if t.has_protector}


__all__ = [
    "AgentId", "Message", "MessageParseError", "ProtocolError", "VoltageReport", "ProtectorReport",
    "Adjust", "DgStatus", "EscalationRequest", "ReorganizeNotice", "RestoreRequest", "MeasureRequest",
    "SubnetworkAssignment", "encode_message", "decode_message", "EdState", "VdState", "LpsState",
    "DgState", "ed_initialize", "ed_step", "ed_reorganize", "ed_force", "vd_monitor", "vd_step",
    "lps_handle", "lps_step", "dg_step", "dg_event", "AgentNetwork", "RoundTrace", "PlanOutcome",
]
