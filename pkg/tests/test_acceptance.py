"""Acceptance criteria, one test each.

Every test prints a ``criterion N: PASS|FAIL`` line as it runs and the
terminal summary repeats all of them at the end of the session.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import conftest
from oracles import lp_grid_oracle
from selfgrid import fixtures
from selfgrid.decomposition import block_permutation, block_sizes, epsilon_decompose
from selfgrid.grid_model import Load
from selfgrid.lp_solver import Constraint, LpProblem, max_violation, solve
from selfgrid.mas import AgentId, Message, VoltageReport, decode_message, encode_message
from selfgrid.power_flow import compute_sensitivity, solve_power_flow
from selfgrid.regulation import closest_dgs, protector_margin
from selfgrid.scenario_sim import GLOBAL, LOCAL, PROPOSED, RUNNERS, run_scenario, write_reports

DELTA = 1e-5
LP_DATA = Path(__file__).parent / "data" / "lp_oracle.json"


@pytest.fixture
def verdict(request, capsys):
    """Call with (criterion, ok, detail); records and prints the line, then asserts."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        conftest.ACCEPTANCE[number] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def _run_all(name):
    grid, config, events = fixtures.scenario(name)
    return grid, config, events, {m: f(grid, config, events) for m, f in RUNNERS.items()}


def test_c01_sensitivity_finite_differences(verdict):
    grid = fixtures.meshed_30bus()
    base = solve_power_flow(grid)
    t0 = time.perf_counter()
    sens = compute_sensitivity(grid, base)
    elapsed = time.perf_counter() - t0
    mon = list(sens.monitored_buses)
    worst = 0.0
    for d in sens.dg_ids:
        bus, j = grid.dg(d).bus, sens.col(d)
        for dp, dq, col in ((DELTA, 0.0, sens.a_vp[:, j]), (0.0, DELTA, sens.a_vq[:, j])):
            up = solve_power_flow(replace(grid, loads=grid.loads + (Load(bus, -dp, -dq),)))
            dn = solve_power_flow(replace(grid, loads=grid.loads + (Load(bus, dp, dq),)))
            fd = (up.v[mon] - dn.v[mon]) / (2 * DELTA)
            worst = max(worst, float(np.max(np.abs(fd - col)) / np.max(np.abs(col))))
    ok = worst <= 1e-4 and elapsed <= 5.0
    verdict(1, ok, f"{2 * len(sens.dg_ids)} columns, worst relative error {worst:.2e}, "
                   f"sensitivity time {elapsed * 1e3:.1f} ms")


def test_c02_decomposition_identity_and_structure(verdict, meshed):
    _, _, sens = meshed
    a = sens.a_vq
    sweep = np.linspace(0.02, 0.9, 10)
    decs = [epsilon_decompose(a, sens.monitored_buses, sens.dg_ids, e) for e in sweep]
    ulp_ok = all(np.all(np.abs(d.retained + d.epsilon * d.residual - a) <= np.spacing(np.abs(a))) for d in decs)
    block_ok = True
    for d in decs:
        rows, cols = block_permutation(d)
        perm = d.retained[np.ix_(rows, cols)]
        mask = np.ones(perm.shape, dtype=bool)
        r0 = c0 = 0
        for nr, nc in block_sizes(d):
            mask[r0:r0 + nr, c0:c0 + nc] = False
            r0, c0 = r0 + nr, c0 + nc
        block_ok &= bool(np.all(perm[mask] == 0.0))
    counts = [len(d.subnetworks) for d in decs]
    monotone = counts == sorted(counts)
    refine = all(
        sum(s.dg_ids <= t.dg_ids and s.bus_ids <= t.bus_ids for t in fine.subnetworks) == 1
        for i, fine in enumerate(decs) for coarse in decs[i + 1:] for s in coarse.subnetworks
    )
    verdict(2, ulp_ok and block_ok and monotone and refine,
            f"1-ulp split {ulp_ok}, block-diagonal {block_ok}, counts {counts}, refinement {refine}")


def test_c03_lp_oracle_equivalence(verdict):
    cases = json.loads(LP_DATA.read_text())["cases"]
    gap = viol = 0.0
    status_ok = True
    live_ok = True
    for k, case in enumerate(cases):
        cons = [(tuple(a), rel, rhs) for a, rel, rhs in case["constraints"]]
        p = LpProblem(case["n"], case["objective"], tuple(tuple(b) for b in case["bounds"]),
                      tuple(Constraint(*c) for c in cons))
        sol = solve(p)
        if k % 50 == 0:
            live_ok &= lp_grid_oracle(case["n"], case["objective"], case["bounds"], cons) == case["oracle"]
        if case["oracle"] is None:
            status_ok &= sol.status == "infeasible"
            continue
        status_ok &= sol.status == "optimal"
        gap = max(gap, abs(sol.objective_value - case["oracle"]))
        viol = max(viol, max_violation(p, sol.x))
    ok = len(cases) == 1000 and status_ok and live_ok and gap <= 2e-3 and viol <= 1e-9
    verdict(3, ok, f"{len(cases)} problems, max objective gap {gap:.1e}, max violation {viol:.1e}, "
                   f"statuses agree {status_ok}, live oracle re-check {live_ok}")


def test_c04_case_study_1(verdict):
    grid, config, events = fixtures.scenario("cs1_trip")
    rep = run_scenario(grid, config, events)
    first = next(r for r in rep.rounds if r.plans)
    plan = first.plans[0]
    sens = compute_sensitivity(grid, solve_power_flow(grid))
    dec = epsilon_decompose(sens.a_vq, sens.monitored_buses, sens.dg_ids, config.ladder.values[0])
    sub = dec.subnetwork_of_bus(10)
    near = [d for d in closest_dgs(dec, 10) if d != 4]
    lo, hi = float(np.min(rep.final_v)), float(np.max(rep.final_v))
    ok = (len(sub.dg_ids) >= 6 and near == rep.involved_dgs and len(rep.involved_dgs) == 2
          and plan.lp_size == (2, 2 * len(plan.nodes)) and rep.resolved and lo >= 0.945 and hi <= 1.055)
    verdict(4, ok, f"subnetwork of {len(sub.dg_ids)} DGs, involved {rep.involved_dgs}, LP {plan.lp_size} over "
                   f"{len(plan.nodes)} buses, final V in [{lo:.4f}, {hi:.4f}]")


def test_c05_case_study_2_independence(verdict):
    grid, config, events = fixtures.scenario("cs2_double_trip")
    both = run_scenario(grid, config, events)
    rounds = [r.round for r in both.rounds if r.plans]
    alone = {}
    for ev in events:
        alone.update(run_scenario(grid, config, [ev]).adjustments)
    same_round = len(rounds) == 1 and len(next(r for r in both.rounds if r.plans).plans) == 2
    ok = both.resolved and same_round and both.adjustments == alone
    verdict(5, ok, f"plans in rounds {rounds}, bitwise equal to single trips {both.adjustments == alone}")


def test_c06_case_study_3_self_organization(verdict):
    grid, config, events = fixtures.scenario("cs3_selforg")
    rep = run_scenario(grid, config, events)
    sens = compute_sensitivity(grid, solve_power_flow(grid))
    bus = grid.dg(3).bus
    counts = [len(closest_dgs(epsilon_decompose(sens.a_vq, sens.monitored_buses, sens.dg_ids, e), bus))
              for e in config.ladder.values[:2]]
    ok = (rep.escalations == 1 and counts[1] > counts[0] and rep.resolved
          and rep.final_structure == rep.initial_structure)
    verdict(6, ok, f"escalations {rep.escalations}, closest DGs {counts[0]} -> {counts[1]}, resolved "
                   f"{rep.resolved}, structure restored {rep.final_structure == rep.initial_structure}")


def test_c07_baseline_ordering(verdict):
    notes, ok = [], True
    for name in ("cs1_trip", "cs1_load", "cs2_double_trip", "cs3_selforg", "protector_load"):
        _, _, _, reps = _run_all(name)
        p, g, l = reps[PROPOSED], reps[GLOBAL], reps[LOCAL]
        ok &= len(p.involved_dgs) <= len(g.involved_dgs) and len(p.involved_nodes) <= len(g.involved_nodes)
        if l.resolved:
            ok &= len(l.involved_dgs) <= len(p.involved_dgs) and len(l.involved_nodes) <= len(p.involved_nodes)
        notes.append(f"{name} {len(l.involved_dgs) if l.resolved else '-'}/{len(p.involved_dgs)}/"
                     f"{len(g.involved_dgs)}")
    grid, config, events, reps = _run_all("cs1_trip")
    low = float(reps[LOCAL].final_v[10])
    ok &= reps[PROPOSED].resolved and not reps[LOCAL].resolved and low < config.limits.v_lower
    verdict(7, ok, f"DGs local/proposed/global: {', '.join(notes)}; tripped-DG bus under local control "
                   f"stays at {low:.4f}")


def test_c08_protector_constraint(verdict):
    grid, config, events, reps = _run_all("protector_load")
    tid = next(t.id for t in grid.transformers if t.has_protector)
    start = protector_margin(grid, solve_power_flow(grid).theta, tid)
    margins = {m: protector_margin(grid, r.rounds[-1].theta, tid) for m, r in reps.items() if r.resolved}
    ok = len(margins) == 3 and all(v >= -5e-3 for v in margins.values())
    shown = ", ".join(f"{m} {v:+.2e}" for m, v in margins.items())
    verdict(8, ok, f"initial margin {start:+.2e} rad; final margins {shown}")


def test_c09_determinism_and_codec(verdict, tmp_path):
    blobs = []
    for k in range(2):
        files = {}
        for name in sorted(fixtures.SCENARIOS):
            _, _, _, reps = _run_all(name)
            for p in write_reports(reps, tmp_path / str(k) / name):
                files[f"{name}/{p.name}"] = p.read_bytes()
        blobs.append(files)
    same = blobs[0] == blobs[1]
    m = Message("inform", AgentId("VD", 362), AgentId("LPS", 34), 23, VoltageReport(362, 0.912))
    text = "message (inform, VD362, LPS34, 23, V<0.912>)"
    codec = encode_message(m) == text and decode_message(text) == m and encode_message(decode_message(text)) == text
    verdict(9, same and codec, f"{len(blobs[0])} files byte-identical {same}; example round-trips {codec}")


def test_c10_end_to_end_runtime(verdict):
    elapsed = time.perf_counter() - conftest.SESSION_START
    verdict(10, elapsed <= 60.0, f"session time at the end of the suite {elapsed:.1f} s")
