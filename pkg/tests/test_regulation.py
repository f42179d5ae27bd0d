from dataclasses import replace

import numpy as np
import pytest

from oracles import lp_grid_oracle
from selfgrid import fixtures
from selfgrid.decomposition import epsilon_decompose
from selfgrid.lp_solver import MAXIMIZE_MIN, MINIMIZE_MAX, solve
from selfgrid.power_flow import compute_sensitivity, solve_power_flow
from selfgrid.regulation import (OVER, PFC, UNDER, UPF, Insufficient, PlanBoundsError, RegulationPlan,
                                 VoltageLimits, Violation, apply_plan, assemble_lp, build_lp, check_voltage,
                                 closest_dgs, constrained_buses, detect_violations, plan_from_rows, plan_global,
                                 plan_regulation, protector_margin)

LIMITS = VoltageLimits()


def _decomposed(grid, eps, mode=PFC):
    sol = solve_power_flow(grid)
    sens = compute_sensitivity(grid, sol)
    dec = epsilon_decompose(sens.voltage_block(mode), sens.monitored_buses, sens.dg_ids, eps, grid.transformers)
    return sol, sens, dec


@pytest.fixture(scope="module")
def cs1_trip(cs1):
    grid, sol, sens = cs1
    dec = epsilon_decompose(sens.a_vq, sens.monitored_buses, sens.dg_ids, 0.3, grid.transformers)
    tripped = grid.with_dg(replace(grid.dg(4), available=False))
    now = solve_power_flow(tripped, init=sol)
    viol = detect_violations(now.v, sens.monitored_buses, LIMITS)
    return tripped, now, sens, dec, viol


def test_check_voltage_closed_band():
    assert check_voltage(3, 0.95, LIMITS) is None
    assert check_voltage(3, 1.05, LIMITS) is None
    assert check_voltage(3, 0.9488, LIMITS) == Violation(3, 0.9488, UNDER)
    assert check_voltage(3, 1.0500001, LIMITS).kind == OVER
    with pytest.raises(ValueError):
        VoltageLimits(1.05, 0.95)


def test_closest_dgs_two_singleton():
    grid = fixtures.two_singleton()
    _, _, apart = _decomposed(grid, 0.5)
    _, _, merged = _decomposed(grid, 0.3)
    b1, b2 = grid.dgs[0].bus, grid.dgs[1].bus
    assert closest_dgs(apart, b1) == [0]
    assert closest_dgs(apart, b2) == [1]
    assert closest_dgs(merged, b1) == [0, 1]


def test_closest_dgs_case_study_1(cs1_trip):
    grid, _, _, dec, viol = cs1_trip
    assert [v.bus for v in viol] == [10]
    sub = dec.subnetwork_of_bus(10)
    assert len(sub.dg_ids) == 9
    near = closest_dgs(dec, 10)
    assert near == [3, 4, 5]
    assert [d for d in near if grid.dg(d).available] == [3, 5]


def test_case_study_1_plan(cs1_trip):
    grid, now, sens, dec, viol = cs1_trip
    sub = dec.subnetwork_of_bus(10)
    plan = plan_regulation(sub, dec, sens, now, viol, None, LIMITS, PFC, grid)
    assert isinstance(plan, RegulationPlan)
    assert plan.involved_dgs == (3, 5)
    buses = constrained_buses(dec, viol, [3, 5])
    assert plan.constrained_buses == tuple(buses)
    assert plan.lp_size == (2, 2 * len(buses))
    assert len(plan.involved_dgs) < len(sub.dg_ids)
    for b, v in plan.predicted_v.items():
        assert LIMITS.v_lower - 1e-9 <= v <= LIMITS.v_upper + 1e-9
    assert all(x >= 0.0 for x in plan.adjustments.values())

    after = solve_power_flow(apply_plan(grid, plan), init=now)
    for v in viol:
        assert LIMITS.v_lower - 5e-3 <= after.v[v.bus] <= LIMITS.v_upper + 5e-3


def test_lp_rows_are_retained_rows(cs1_trip):
    grid, now, sens, dec, viol = cs1_trip
    sub = dec.subnetwork_of_bus(10)
    lp = build_lp(sub, dec, sens, now, viol, [3, 5], LIMITS, PFC, grid)
    buses = constrained_buses(dec, viol, [3, 5])
    for k, b in enumerate(buses):
        expect = (dec.retained[dec.row_buses.index(b), dec.col_dgs.index(3)],
                  dec.retained[dec.row_buses.index(b), dec.col_dgs.index(5)])
        assert lp.constraints[2 * k].coeffs == expect
        assert lp.constraints[2 * k + 1].coeffs == expect
        assert lp.constraints[2 * k].rhs == LIMITS.v_lower - now.v[b]
        assert lp.constraints[2 * k + 1].rhs == LIMITS.v_upper - now.v[b]


def test_case_study_1_plan_matches_grid_oracle(cs1_trip):
    grid, now, sens, dec, viol = cs1_trip
    lp = build_lp(dec.subnetwork_of_bus(10), dec, sens, now, viol, [3, 5], LIMITS, PFC, grid)
    assert lp.objective == MINIMIZE_MAX
    sol = solve(lp)
    cons = [(c.coeffs, c.relation, c.rhs) for c in lp.constraints]
    assert sol.objective_value == pytest.approx(lp_grid_oracle(2, MINIMIZE_MAX, lp.bounds, cons), abs=2e-3)


def test_build_lp_rejects_bad_dgs(cs1_trip):
    grid, now, sens, dec, viol = cs1_trip
    sub = dec.subnetwork_of_bus(10)
    with pytest.raises(ValueError):
        build_lp(sub, dec, sens, now, viol, [], LIMITS, PFC, grid)
    with pytest.raises(ValueError):
        build_lp(sub, dec, sens, now, viol, [4], LIMITS, PFC, grid)


def test_counting_rule_21_buses():
    rng = np.random.default_rng(0)
    rows = rng.uniform(0.01, 0.05, (21, 2))
    lp = assemble_lp(rows, np.full(21, 0.97), [(0.5, -0.5)] * 2, [], LIMITS, PFC, UNDER)
    assert lp.size == (2, 42)


def test_minimal_assembly_with_protector():
    lp = assemble_lp([[0.05]], [0.949], [(0.5, -0.5)], [((0.01,), 0.02)], LIMITS, PFC, UNDER)
    assert lp.size == (1, 3)
    assert lp.constraints[2].coeffs == (0.01,)
    assert lp.constraints[2].rhs == -0.02


def test_single_dg_closed_form():
    plan = plan_from_rows([7], [1], [[0.05]], [0.949], [(0.5, -0.5)], [], [Violation(7, 0.949, UNDER)],
                          LIMITS, PFC)
    assert plan.adjustments[1] == pytest.approx((0.95 - 0.949) / 0.05, abs=1e-12)
    assert plan.predicted_v[7] == pytest.approx(0.95, abs=1e-12)
    assert plan.lp_size == (1, 2)


def test_overvoltage_adjustments_nonpositive():
    rows = [[0.04, 0.01], [0.02, 0.03], [0.01, 0.05]]
    v0 = [1.06, 1.055, 1.04]
    viol = [Violation(0, 1.06, OVER), Violation(1, 1.055, OVER)]
    plan = plan_from_rows([0, 1, 2], [0, 1], rows, v0, [(0.5, -0.6), (0.5, -0.6)], [], viol, LIMITS, PFC)
    assert all(x <= 0.0 for x in plan.adjustments.values())
    lp = assemble_lp(rows, v0, [(0.5, -0.6), (0.5, -0.6)], [], LIMITS, PFC, OVER)
    assert lp.objective == MAXIMIZE_MIN
    cons = [(c.coeffs, c.relation, c.rhs) for c in lp.constraints]
    assert plan.objective_value == pytest.approx(lp_grid_oracle(2, MAXIMIZE_MIN, lp.bounds, cons), abs=2e-3)


def test_sole_dg_tripped_is_insufficient():
    grid = fixtures.two_singleton()
    sol, sens, dec = _decomposed(grid, 0.5)
    grid = grid.with_dg(replace(grid.dgs[0], available=False))
    bus = grid.dgs[0].bus
    viol = [Violation(bus, 0.94, UNDER)]
    res = plan_regulation(dec.subnetwork_of_bus(bus), dec, sens, sol, viol, None, LIMITS, PFC, grid)
    assert isinstance(res, Insufficient) and res.reason == "dg_unavailable"


def test_infeasible_is_insufficient():
    res = plan_from_rows([0], [0], [[0.05]], [0.9], [(0.5, -0.5)], [], [Violation(0, 0.9, UNDER)], LIMITS, PFC)
    assert isinstance(res, Insufficient)
    assert res.reason == "infeasible" and res.lp_size == (1, 2)


def test_global_involves_at_least_as_many(cs1_trip):
    grid, now, sens, dec, viol = cs1_trip
    local = plan_regulation(dec.subnetwork_of_bus(10), dec, sens, now, viol, None, LIMITS, PFC, grid)
    glob = plan_global(sens, now, viol, LIMITS, PFC, grid)
    assert len(glob.involved_dgs) >= len(local.involved_dgs)
    assert len(glob.constrained_buses) > len(local.constrained_buses)


def _plan(adjustments, mode=PFC):
    return RegulationPlan(mode, UNDER, adjustments, {}, (len(adjustments), 0), 0.0)


def test_apply_plan_adds_adjustment():
    grid = fixtures.case_study_1()
    grid = grid.with_dg(replace(grid.dg(3), q0=0.0, q_cap=0.5))
    out = apply_plan(grid, _plan({3: 0.241}))
    assert out.dg(3).q0 == 0.241
    assert out.dg(5) == grid.dg(5)


def test_apply_plan_zero_is_identity():
    grid = fixtures.case_study_1()
    out = apply_plan(grid, _plan({d.id: 0.0 for d in grid.dgs}))
    assert out == grid
    for a, b in zip(out.dgs, grid.dgs):
        assert a == b


def test_apply_plan_overflow_names_dg():
    grid = fixtures.protector_grid()
    d = grid.dgs[2]
    with pytest.raises(PlanBoundsError, match=f"DG {d.id}"):
        apply_plan(grid, _plan({d.id: d.p_cap - d.p0 + 1e-6}, UPF))


def test_protector_invariant():
    grid = fixtures.protector_grid()
    base = solve_power_flow(grid)
    sens = compute_sensitivity(grid, base)
    dec = epsilon_decompose(sens.a_vp, sens.monitored_buses, sens.dg_ids, 0.1, grid.transformers)
    loads = tuple(replace(ld, p=ld.p * 2.5, q=ld.q * 2.5) if ld.bus == 6 else ld for ld in grid.loads)
    stepped = replace(grid, loads=loads)
    now = solve_power_flow(stepped, init=base)
    viol = detect_violations(now.v, sens.monitored_buses, LIMITS)
    assert viol
    sub = dec.subnetwork_of_bus(viol[0].bus)
    assert 0 in sub.transformer_ids
    plan = plan_regulation(sub, dec, sens, now, viol, None, LIMITS, UPF, stepped)
    assert isinstance(plan, RegulationPlan)
    assert plan.protectors == (0,)
    after = solve_power_flow(apply_plan(stepped, plan), init=now)
    assert protector_margin(stepped, after.theta, 0) >= -5e-3
    unguarded = plan_from_rows(plan.constrained_buses, plan.involved_dgs,
                               [[dec.retained[dec.row_buses.index(b), dec.col_dgs.index(d)]
                                 for d in plan.involved_dgs] for b in plan.constrained_buses],
                               [now.v[b] for b in plan.constrained_buses],
                               [(stepped.dg(d).p_cap - stepped.dg(d).p0, -stepped.dg(d).p0)
                                for d in plan.involved_dgs], [], viol, LIMITS, UPF)
    assert isinstance(unguarded, RegulationPlan)
    assert unguarded.adjustments != plan.adjustments

