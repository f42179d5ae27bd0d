"""Synthetic test grids.

The secondary networks here are rings of low-voltage buses, each bus tied to a
stiff primary bus through its own network transformer. With the default
impedances a DG's voltage sensitivity falls by roughly 0.43 per ring hop, so
an epsilon ladder of 0.3 / 0.15 / 0.1 widens influence ranges from one to two
to three hops. The fixtures rely on that regularity.

``python3 -m selfgrid.fixtures OUTDIR`` writes every grid and scenario as YAML.
"""

from __future__ import annotations

import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .decomposition import EpsilonLadder
from .grid_model import (PFC, PQ, PRIMARY, SECONDARY, SLACK, UPF, Branch, Bus, DgUnit, GridModel,
                         Load, Transformer, dump_grid)

PRIMARY_KV = 13.8
SECONDARY_KV = 0.48

RING_LINE = (0.06, 0.18)
RING_TRAFO = (0.03, 0.18)
STIFF_FEEDER = (0.0002, 0.001)


class _Builder:
    def __init__(self, name: str, v_set: float = 1.0):
        self.name = name
        self.buses = [Bus(0, SLACK, PRIMARY_KV, PRIMARY, v_set)]
        self.branches: list[Branch] = []
        self.transformers: list[Transformer] = []
        self.loads: list[Load] = []
        self.dgs: list[DgUnit] = []

    def bus(self, level: str = SECONDARY) -> int:
        bid = len(self.buses)
        kv = PRIMARY_KV if level == PRIMARY else SECONDARY_KV
        self.buses.append(Bus(bid, PQ, kv, level))
        return bid

    def line(self, a: int, b: int, z) -> None:
        self.branches.append(Branch(len(self.branches), a, b, float(z[0]), float(z[1])))

    def trafo(self, p: int, s: int, z, tap: float = 1.0, shift: float = 0.0,
              protector: bool = False) -> int:
        tid = len(self.transformers)
        self.transformers.append(Transformer(tid, p, s, float(z[0]), float(z[1]), tap, shift, protector))
        return tid

    def load(self, bus: int, p: float, q: float) -> None:
        self.loads.append(Load(bus, p, q))

    def dg(self, bus: int, mode: str = PFC, p0: float = 0.0, q0: float = 0.0, p_cap: float | None = None,
           q_cap: float = 1.0, q_abs_cap: float = 1.0) -> int:
        did = len(self.dgs)
        self.dgs.append(DgUnit(did, bus, mode, p0, q0, p0 if p_cap is None else p_cap, q_cap, q_abs_cap))
        return did

    def ring(self, n: int, feeder_from: int = 0, feeder=STIFF_FEEDER, line=RING_LINE,
             trafo=RING_TRAFO, load=(0.25, 0.08)) -> list[int]:
        """Ring of ``n`` secondary buses, each tied to one new primary bus."""
        prim = self.bus(PRIMARY)
        self.line(feeder_from, prim, feeder)
        ring = [self.bus() for _ in range(n)]
        for i, b in enumerate(ring):
            self.line(b, ring[(i + 1) % n], line)
            self.trafo(prim, b, trafo)
            if load is not None:
                self.load(b, *load)
        return ring

    def build(self) -> GridModel:
        return GridModel(tuple(self.buses), tuple(self.branches), tuple(self.transformers),
                         tuple(self.loads), tuple(self.dgs), 1.0, self.name)


def two_bus() -> GridModel:
    """Slack plus one load bus over a purely reactive line."""
    return GridModel(
        buses=(Bus(0, SLACK, 0.48, SECONDARY), Bus(1, PQ, 0.48, SECONDARY)),
        branches=(Branch(0, 0, 1, 0.0, 0.1),),
        loads=(Load(1, 0.5, 0.2),),
        name="two_bus",
    )


def two_singleton() -> GridModel:
    """Two DG buses whose normalized cross-sensitivity sits between 0.3 and 0.5."""
    b = _Builder("two_singleton")
    prim = b.bus(PRIMARY)
    b.line(0, prim, STIFF_FEEDER)
    s1, s2 = b.bus(), b.bus()
    b.trafo(prim, s1, (0.02, 0.1))
    b.trafo(prim, s2, (0.02, 0.1))
    b.line(s1, s2, (0.03, 0.15))
    for s in (s1, s2):
        b.load(s, 0.2, 0.05)
        b.dg(s, p0=0.1, q_cap=0.5, q_abs_cap=0.5)
    return b.build()


def meshed_30bus() -> GridModel:
    """30 buses: a looped primary feeder and a 4 x 6 secondary mesh behind 4 transformers.

    One transformer is off-nominal with a small phase shift; one carries a
    network protector.
    """
    b = _Builder("meshed_30bus", v_set=1.02)
    p = [b.bus(PRIMARY) for _ in range(5)]
    b.line(0, p[0], (0.002, 0.01))
    b.line(p[0], p[1], (0.004, 0.015))
    b.line(p[1], p[2], (0.004, 0.015))
    b.line(p[0], p[3], (0.004, 0.015))
    b.line(p[3], p[4], (0.004, 0.015))
    b.line(p[2], p[4], (0.006, 0.02))
    rows, cols = 4, 6
    grid = [[b.bus() for _ in range(cols)] for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                b.line(grid[r][c], grid[r][c + 1], (0.03, 0.06))
            if r + 1 < rows:
                b.line(grid[r][c], grid[r + 1][c], (0.035, 0.07))
            b.load(grid[r][c], 0.08 + 0.01 * ((r + c) % 3), 0.03)
    b.trafo(p[1], grid[0][0], (0.01, 0.08))
    b.trafo(p[2], grid[0][5], (0.01, 0.08), tap=1.025, shift=0.01)
    b.trafo(p[3], grid[3][0], (0.01, 0.08), protector=True)
    b.trafo(p[4], grid[3][5], (0.01, 0.08))
    for r, c in ((0, 2), (1, 4), (1, 1), (2, 3), (3, 2), (2, 5)):
        b.dg(grid[r][c], p0=0.1, p_cap=0.3, q0=0.02, q_cap=0.4, q_abs_cap=0.4)
    return b.build()


def _heavy(b: _Builder, bus: int, load=(1.2, 0.4), p0: float = 1.0, q0: float = 0.2) -> int:
    """A bus whose large load is carried mostly by its own DG."""
    b.load(bus, load[0] - 0.25, load[1] - 0.08)
    return b.dg(bus, p0=p0, p_cap=p0 + 0.1, q0=q0, q_cap=1.0, q_abs_cap=1.0)


def case_study_1() -> GridModel:
    """16-bus ring with nine DGs; DG 4 at ring position 8 feeds a heavy local load.

    At epsilon 0.3 the ring is one subnetwork and bus 10 (position 8) is
    reached by DG 4 and its two immediate neighbours only.
    """
    b = _Builder("case_study_1")
    ring = b.ring(16)
    for pos in (1, 3, 5, 7, 8, 9, 11, 13, 15):
        if pos == 8:
            _heavy(b, ring[pos])
        else:
            b.dg(ring[pos], p0=0.2, p_cap=0.4, q_cap=1.0, q_abs_cap=1.0)
    return b.build()


def case_study_2() -> GridModel:
    """Two 10-bus rings, each on its own feeder from the slack bus.

    Each ring is one subnetwork with a heavy DG at position 4 (DGs 2 and 8).
    The rings share only the slack bus, so their sensitivities are exactly
    decoupled.
    """
    b = _Builder("case_study_2")
    for _ in range(2):
        ring = b.ring(10)
        for pos in (1, 3, 4, 5, 7, 9):
            if pos == 4:
                _heavy(b, ring[pos])
            else:
                b.dg(ring[pos], p0=0.2, p_cap=0.4, q_cap=1.0, q_abs_cap=1.0)
    return b.build()


def case_study_3() -> GridModel:
    """Ring where one DG bus is reached by no other DG at the ladder head."""
    b = _Builder("case_study_3")
    ring = b.ring(14)
    for pos in (0, 2, 5, 7, 9, 12):
        if pos == 7:
            _heavy(b, ring[pos], load=(0.95, 0.3), p0=0.75, q0=0.15)
        else:
            b.dg(ring[pos], p0=0.2, p_cap=0.4, q_cap=1.5, q_abs_cap=1.0)
    return b.build()


def protector_grid() -> GridModel:
    """Two 4-bus secondary clusters joined by a tie, in UPF mode.

    Cluster A (buses 3-6) hangs off transformer 0, which has a network
    protector; its DGs produce a little less than its load, so the unit
    carries only a small forward flow. Cluster B (buses 7-10) sits behind
    transformer 1. A load step at bus 6 calls for more active injection than
    cluster A can absorb without reversing the flow.
    """
    b = _Builder("protector")
    p1, p2 = b.bus(PRIMARY), b.bus(PRIMARY)
    b.line(0, p1, STIFF_FEEDER)
    b.line(0, p2, STIFF_FEEDER)
    a = [b.bus() for _ in range(4)]
    c = [b.bus() for _ in range(4)]
    for i in range(3):
        b.line(a[i], a[i + 1], (0.04, 0.08))
        b.line(c[i], c[i + 1], (0.04, 0.08))
    b.line(a[3], c[3], (0.08, 0.16))
    b.trafo(p1, a[0], (0.01, 0.06), protector=True)
    b.trafo(p2, c[0], (0.01, 0.06))
    for x in a + c:
        b.load(x, 0.12, 0.036)
    for x in (a[0], a[1], a[2], a[3], c[2]):
        b.dg(x, UPF, p0=0.1, p_cap=1.0, q_cap=0.0, q_abs_cap=0.0)
    return b.build()


def exhausted_grid() -> GridModel:
    """The case-study-1 ring with almost no reactive headroom on any DG."""
    g = case_study_1()
    dgs = tuple(replace(d, q0=min(d.q0, 0.02), q_cap=0.02, q_abs_cap=0.02) for d in g.dgs)
    return replace(g, dgs=dgs, name="exhausted")


def random_meshed_grid(seed: int | None = None, n_sec: int = 12, n_dg: int = 4) -> GridModel:
    """Random connected secondary mesh behind two transformers.

    ``seed=None`` reads ``SELFGRID_SEED`` (default 0).
    """
    if seed is None:
        seed = int(os.environ.get("SELFGRID_SEED", "0"))
    rng = np.random.default_rng(seed)
    b = _Builder(f"random_{seed}")
    p1, p2 = b.bus(PRIMARY), b.bus(PRIMARY)
    b.line(0, p1, (0.002, 0.01))
    b.line(p1, p2, (0.003, 0.012))
    sec = [b.bus() for _ in range(n_sec)]
    order = rng.permutation(n_sec)
    for k in range(1, n_sec):
        a = sec[order[k]]
        c = sec[order[rng.integers(0, k)]]
        b.line(a, c, (round(float(rng.uniform(0.01, 0.04)), 4), round(float(rng.uniform(0.03, 0.08)), 4)))
    for _ in range(max(1, n_sec // 4)):
        i, j = rng.choice(n_sec, 2, replace=False)
        b.line(sec[i], sec[j], (round(float(rng.uniform(0.01, 0.04)), 4), round(float(rng.uniform(0.03, 0.08)), 4)))
    t1, t2 = rng.choice(n_sec, 2, replace=False)
    b.trafo(p1, sec[t1], (0.01, 0.06))
    b.trafo(p2, sec[t2], (0.01, 0.06), shift=round(float(rng.uniform(-0.02, 0.02)), 4))
    for s in sec:
        b.load(s, round(float(rng.uniform(0.02, 0.1)), 4), round(float(rng.uniform(0.0, 0.04)), 4))
    for s in rng.choice(n_sec, n_dg, replace=False):
        p0 = round(float(rng.uniform(0.0, 0.1)), 4)
        b.dg(sec[s], p0=p0, p_cap=p0 + 0.2, q0=0.0, q_cap=0.3, q_abs_cap=0.3)
    return b.build()


GRIDS = {
    "two_bus": two_bus,
    "two_singleton": two_singleton,
    "meshed_30bus": meshed_30bus,
    "case_study_1": case_study_1,
    "case_study_2": case_study_2,
    "case_study_3": case_study_3,
    "protector": protector_grid,
    "exhausted": exhausted_grid,
}


def _scenario(grid: str, events, **config):
    def build():
        from .scenario_sim import ScenarioEvent, SimConfig

        cfg = dict(config)
        if "ladder" in cfg:
            cfg["ladder"] = EpsilonLadder(cfg["ladder"])
        return grid, SimConfig(**cfg), [ScenarioEvent(**e) for e in events]
    return build


# name -> builder returning (grid name, config, events)
SCENARIOS = {
    "quiescent": _scenario("case_study_1", []),
    "cs1_trip": _scenario("case_study_1", [dict(round=1, kind="dg_trip", dg=4)]),
    "cs1_load": _scenario("case_study_1", [dict(round=1, kind="load_scale", bus=3, factor=4.0)]),
    "cs2_double_trip": _scenario("case_study_2", [dict(round=1, kind="dg_trip", dg=2),
                                                  dict(round=1, kind="dg_trip", dg=8)]),
    "cs3_selforg": _scenario("case_study_3", [dict(round=1, kind="dg_trip", dg=3),
                                              dict(round=4, kind="dg_restore", dg=3)]),
    "protector_load": _scenario("protector", [dict(round=1, kind="load_scale", bus=6, factor=2.5)],
                                mode=UPF, ladder=(0.1, 0.05)),
    "exhausted": _scenario("exhausted", [dict(round=1, kind="dg_trip", dg=4)]),
}


def scenario(name: str):
    """``(grid, config, events)`` for a named scenario fixture."""
    grid_name, config, events = SCENARIOS[name]()
    return GRIDS[grid_name](), config, events


def write_all(out_dir: str | Path) -> list[Path]:
    """Write every grid as ``<name>.yaml`` and every scenario as ``<name>.scenario.yaml``."""
    from .scenario_sim import dump_scenario

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fn in GRIDS.items():
        path = out / f"{name}.yaml"
        dump_grid(fn(), path)
        written.append(path)
    for name, build in SCENARIOS.items():
        grid_name, config, events = build()
        path = out / f"{name}.scenario.yaml"
        path.write_text(f"# grid: {grid_name}.yaml\n" + dump_scenario(config, events))
        written.append(path)
    return written


if __name__ == "__main__":
    for p in write_all(sys.argv[1] if len(sys.argv) > 1 else "."):
        print(p)
