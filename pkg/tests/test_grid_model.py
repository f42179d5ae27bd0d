from dataclasses import replace
from pathlib import Path

import pytest
import yaml

from oracles import bfs_components
from selfgrid import fixtures
from selfgrid.grid_model import (PFC, UPF, Bus, DgUnavailableError, DgUnit, GridModel, GridParseError,
                                 GridValidationError, Load, dg_surplus, dump_grid, load_grid, parse_grid,
                                 validate)

DATA = Path(fixtures.__file__).parent / "data"


def test_minimal_two_bus_file():
    grid = load_grid(DATA / "two_bus.yaml")
    assert grid.n_bus == 2
    assert len(grid.branches) == 1
    assert validate(grid) == []


def test_two_slack_buses_named():
    doc = yaml.safe_load((DATA / "two_bus.yaml").read_text())
    doc["buses"][1]["kind"] = "slack"
    doc["loads"] = []
    with pytest.raises(GridValidationError) as err:
        parse_grid(yaml.safe_dump(doc))
    assert len(err.value.issues) == 1
    assert "0" in err.value.issues[0] and "1" in err.value.issues[0]
    assert "slack" in err.value.issues[0]


def test_meshed_counts_match_raw_file():
    raw = yaml.safe_load((DATA / "meshed_30bus.yaml").read_text())
    counts = (len(raw["buses"]), len(raw["dgs"]), len(raw["transformers"]))
    assert counts == (30, 6, 4)
    grid = load_grid(DATA / "meshed_30bus.yaml")
    assert (grid.n_bus, len(grid.dgs), len(grid.transformers)) == counts


def test_malformed_file():
    with pytest.raises(GridParseError):
        parse_grid("buses: [1, 2")
    with pytest.raises(GridParseError):
        parse_grid("- just\n- a list\n")


def test_physical_units_converted():
    text = """
s_base: 10.0
buses:
  - {id: 0, kind: slack, base_kv: 0.48}
  - {id: 1, base_kv: 0.48}
branches:
  - {id: 0, from: 0, to: 1, r_ohm: 0.0002304, x_ohm: 0.002304}
loads:
  - {bus: 1, p_mw: 2.0, q_mvar: 1.0}
"""
    grid = parse_grid(text)
    z_base = 0.48 ** 2 / 10.0
    assert grid.branches[0].r == pytest.approx(0.0002304 / z_base)
    assert grid.branches[0].x == pytest.approx(0.1)
    assert grid.loads[0].p == pytest.approx(0.2)
    assert grid.loads[0].q == pytest.approx(0.1)
    assert grid.transformers == ()


def test_valid_two_bus_reports_nothing():
    assert validate(fixtures.two_bus()) == []


def test_dg_q0_above_cap():
    grid = fixtures.two_singleton()
    bad = grid.with_dg(replace(grid.dgs[1], q0=0.6))
    issues = validate(bad)
    assert len(issues) == 1
    assert issues[0].startswith(f"dg {grid.dgs[1].id}:")


def test_isolated_bus_matches_bfs():
    grid = fixtures.two_bus()
    grid = replace(grid, buses=grid.buses + (Bus(2),))
    issues = validate(grid)
    edges = [(br.from_bus, br.to_bus) for br in grid.branches]
    comps = bfs_components(grid.n_bus, edges)
    stray = [c for c in comps if grid.slack_bus not in c]
    assert stray == [[2]]
    assert issues == [f"disconnected component: buses {stray[0]}"]


@pytest.mark.parametrize("dg, mode, expected", [
    (DgUnit(0, 0, q0=0.0, q_cap=0.5, q_abs_cap=0.5), PFC, (0.5, -0.5)),
    (DgUnit(0, 0, mode=UPF, p0=0.3, p_cap=0.3), UPF, (0.0, -0.3)),
    (DgUnit(0, 0, q0=0.2, q_cap=0.5, q_abs_cap=0.1), PFC, (0.3, -0.3)),
])
def test_dg_surplus_examples(dg, mode, expected):
    upper, lower = dg_surplus(dg, mode)
    # hand arithmetic: pfc gives (q_cap - q0, -(q_abs_cap + q0)), upf gives (p_cap - p0, -p0)
    if mode == PFC:
        hand = (dg.q_cap - dg.q0, -dg.q_abs_cap - dg.q0)
    else:
        hand = (dg.p_cap - dg.p0, -dg.p0)
    assert (upper, lower) == pytest.approx(expected, abs=1e-15)
    assert (upper, lower) == pytest.approx(hand, abs=1e-15)
    assert lower <= 0.0 <= upper


def test_dg_surplus_offline():
    with pytest.raises(DgUnavailableError):
        dg_surplus(DgUnit(7, 0, available=False), PFC)


@pytest.mark.parametrize("name", sorted(fixtures.GRIDS))
def test_round_trip(name, tmp_path):
    grid = fixtures.GRIDS[name]()
    path = tmp_path / "g.yaml"
    dump_grid(grid, path)
    again = load_grid(path)
    assert again == grid
    for section in ("buses", "branches", "transformers", "loads", "dgs"):
        for a, b in zip(getattr(grid, section), getattr(again, section)):
            assert a == b


def _mutations(grid: GridModel):
    br, tr, dg = grid.branches[3], grid.transformers[0], grid.dgs[0]
    yield "bus kind", replace(grid, buses=(replace(grid.buses[5], kind="pv"),) + grid.buses[:5] + grid.buses[6:])
    yield "base_kv", replace(grid, buses=grid.buses[:4] + (replace(grid.buses[4], base_kv=0.0),) + grid.buses[5:])
    yield "branch zero impedance", replace(grid, branches=grid.branches[:3] + (replace(br, r=0.0, x=0.0),)
                                           + grid.branches[4:])
    yield "branch self loop", replace(grid, branches=grid.branches[:3] + (replace(br, to_bus=br.from_bus),)
                                      + grid.branches[4:])
    yield "duplicate branch", replace(grid, branches=grid.branches + (replace(br, from_bus=br.to_bus,
                                                                               to_bus=br.from_bus),))
    yield "transformer tap", replace(grid, transformers=(replace(tr, tap=0.0),) + grid.transformers[1:])
    yield "transformer levels", replace(grid, transformers=(replace(tr, primary_bus=tr.secondary_bus,
                                                                     secondary_bus=tr.primary_bus),)
                                        + grid.transformers[1:])
    yield "load on slack", replace(grid, loads=grid.loads + (Load(grid.slack_bus, 0.1, 0.0),))
    yield "dg bus", grid.with_dg(replace(dg, bus=999))
    yield "dg mode", grid.with_dg(replace(dg, mode="droop"))
    yield "dg p0", grid.with_dg(replace(dg, p0=dg.p_cap + 0.1))
    yield "dg q0", grid.with_dg(replace(dg, q0=-dg.q_abs_cap - 0.1))
    yield "s_base", replace(grid, s_base=-1.0)


@pytest.mark.parametrize("label, grid", list(_mutations(fixtures.meshed_30bus())))
def test_single_mutation_single_entry(label, grid):
    assert validate(fixtures.meshed_30bus()) == []
    assert len(validate(grid)) == 1, validate(grid)


def test_model_is_immutable():
    grid = fixtures.two_bus()
    with pytest.raises(AttributeError):
        grid.s_base = 2.0
    with pytest.raises(KeyError):
        grid.dg(5)
