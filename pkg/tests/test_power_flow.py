import math
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import gauss_seidel
from selfgrid import fixtures
from selfgrid.grid_model import PRIMARY, SLACK, Branch, Bus, GridModel, Load, Transformer
from selfgrid.power_flow import (SingularJacobianError, compute_losses, compute_sensitivity, full_jacobian,
                                 slack_injection, solve_power_flow)

DELTA = 1e-5


def _two_bus_closed_form(p, q, x):
    # receiving end of a lossless line from 1.0 pu: P = v sin(d)/x, Q = (v cos(d) - v^2)/x
    b = 1.0 - 2.0 * q * x
    c = (p * x) ** 2 + (q * x) ** 2
    u = (b + math.sqrt(b * b - 4.0 * c)) / 2.0
    v = math.sqrt(u)
    theta = -math.atan2(p * x, q * x + u)
    return v, theta


def test_zero_injection_flat():
    grid = fixtures.meshed_30bus()
    grid = replace(grid, loads=(), dgs=tuple(replace(g, p0=0.0, q0=0.0) for g in grid.dgs),
                   transformers=tuple(replace(t, tap=1.0, theta_shift=0.0) for t in grid.transformers))
    sol = solve_power_flow(grid)
    assert sol.converged
    assert np.allclose(sol.v, 1.02, atol=1e-12)
    assert np.allclose(sol.theta, 0.0, atol=1e-12)
    p_loss, q_loss = compute_losses(grid, sol)
    assert abs(p_loss) < 1e-12 and abs(q_loss) < 1e-12


def test_zero_injection_phase_shift_accumulates():
    grid = GridModel(
        buses=(Bus(0, SLACK), Bus(1, level=PRIMARY), Bus(2), Bus(3)),
        branches=(Branch(0, 0, 1, 0.01, 0.05), Branch(1, 2, 3, 0.02, 0.04)),
        transformers=(Transformer(0, 1, 2, 0.01, 0.08, theta_shift=0.03),),
    )
    sol = solve_power_flow(grid)
    assert np.allclose(sol.v, 1.0, atol=1e-12)
    assert sol.theta == pytest.approx([0.0, 0.0, -0.03, -0.03], abs=1e-12)


def test_two_bus_closed_form():
    grid = fixtures.two_bus()
    sol = solve_power_flow(grid)
    v, theta = _two_bus_closed_form(0.5, 0.2, 0.1)
    assert sol.converged
    assert sol.v[1] == pytest.approx(v, abs=1e-8)
    assert sol.theta[1] == pytest.approx(theta, abs=1e-8)
    assert sol.v[0] == 1.0 and sol.theta[0] == 0.0


def test_two_bus_losses_by_hand():
    grid = fixtures.two_bus()
    sol = solve_power_flow(grid)
    v, _ = _two_bus_closed_form(0.5, 0.2, 0.1)
    i2 = (0.5 ** 2 + 0.2 ** 2) / v ** 2
    p_loss, q_loss = compute_losses(grid, sol)
    assert p_loss == pytest.approx(i2 * 0.0, abs=1e-10)
    assert q_loss == pytest.approx(i2 * 0.1, abs=1e-8)


def test_two_bus_resistive_losses():
    grid = replace(fixtures.two_bus(), branches=(Branch(0, 0, 1, 0.05, 0.1),))
    sol = solve_power_flow(grid)
    i2 = (0.5 ** 2 + 0.2 ** 2) / sol.v[1] ** 2
    p_loss, q_loss = compute_losses(grid, sol)
    assert p_loss == pytest.approx(i2 * 0.05, abs=1e-8)
    assert q_loss == pytest.approx(i2 * 0.1, abs=1e-8)


def test_meshed_converges_and_matches_gauss_seidel(meshed):
    grid, sol, _ = meshed
    assert sol.converged and sol.iterations <= 10
    assert sol.mismatch_inf_norm <= 1e-8
    V, _ = gauss_seidel(grid)
    assert np.max(np.abs(np.abs(V) - sol.v)) <= 1e-6
    assert np.max(np.abs(np.angle(V) - sol.theta)) <= 1e-6


@pytest.mark.parametrize("name", sorted(fixtures.GRIDS))
def test_power_balance_and_warm_start(name):
    grid = fixtures.GRIDS[name]()
    sol = solve_power_flow(grid)
    assert sol.converged
    gen = slack_injection(grid, sol).real + sum(g.p0 for g in grid.dgs if g.available)
    load = sum(ld.p for ld in grid.loads)
    p_loss, _ = compute_losses(grid, sol)
    assert abs(gen - load - p_loss) <= 10 * sol.tol
    warm = solve_power_flow(grid, init=sol)
    assert warm.converged and warm.iterations <= 2


def test_non_convergence_is_a_flag():
    grid = replace(fixtures.two_bus(), loads=(Load(1, 6.0, 1.0),))
    sol = solve_power_flow(grid, max_iter=15)
    assert not sol.converged
    assert sol.iterations == 15


def test_singular_jacobian_names_iteration():
    grid = fixtures.two_bus()
    grid = replace(grid, buses=grid.buses + (Bus(2),), loads=grid.loads + (Load(2, 0.1, 0.0),))
    with pytest.raises(SingularJacobianError, match="iteration 1"):
        solve_power_flow(grid)


def _perturbed(grid, bus, dp, dq):
    return solve_power_flow(replace(grid, loads=grid.loads + (Load(bus, -dp, -dq),)))


def _fd_check(grid, sol, sens):
    worst = 0.0
    for d in sens.dg_ids:
        bus = grid.dg(d).bus
        j = sens.col(d)
        for which, vblock, tblock in (("p", sens.a_vp, sens.a_theta_p), ("q", sens.a_vq, sens.a_theta_q)):
            dp, dq = (DELTA, 0.0) if which == "p" else (0.0, DELTA)
            up = _perturbed(grid, bus, dp, dq)
            dn = _perturbed(grid, bus, -dp, -dq)
            assert up.converged and dn.converged
            mon = list(sens.monitored_buses)
            term = list(sens.terminal_buses)
            fd_v = (up.v[mon] - dn.v[mon]) / (2 * DELTA)
            fd_t = (up.theta[term] - dn.theta[term]) / (2 * DELTA)
            col = np.concatenate([vblock[:, j], tblock[:, j]])
            fd = np.concatenate([fd_v, fd_t])
            worst = max(worst, float(np.max(np.abs(fd - col)) / np.max(np.abs(col))))
    return worst


@pytest.mark.parametrize("name", sorted(set(fixtures.GRIDS) - {"two_bus"}))
def test_sensitivity_finite_differences(name):
    grid = fixtures.GRIDS[name]()
    sol = solve_power_flow(grid)
    sens = compute_sensitivity(grid, sol)
    assert _fd_check(grid, sol, sens) <= 1e-4


def test_sensitivity_runtime_and_fd_meshed():
    grid = fixtures.meshed_30bus()
    sol = solve_power_flow(grid)
    t0 = time.perf_counter()
    sens = compute_sensitivity(grid, sol)
    assert time.perf_counter() - t0 <= 5.0
    assert sens.a_vq.shape == (len(grid.monitored_buses()), 6)
    assert np.all(np.isfinite(sens.a_vq)) and np.all(np.isfinite(sens.a_theta_p))


def test_sensitivity_is_jacobian_inverse(meshed):
    grid, sol, sens = meshed
    J, order = full_jacobian(grid, sol)
    inv = np.linalg.inv(J.toarray())
    m = len(order)
    pos = {int(b): i for i, b in enumerate(order)}
    for d in sens.dg_ids:
        k = pos[grid.dg(d).bus]
        j = sens.col(d)
        for b in sens.monitored_buses:
            i = sens.v_row(b)
            assert sens.a_vp[i, j] == pytest.approx(inv[m + pos[b], k], abs=1e-10)
            assert sens.a_vq[i, j] == pytest.approx(inv[m + pos[b], m + k], abs=1e-10)
        for b in sens.terminal_buses:
            i = sens.theta_row(b)
            assert sens.a_theta_p[i, j] == pytest.approx(inv[pos[b], k], abs=1e-10)
            assert sens.a_theta_q[i, j] == pytest.approx(inv[pos[b], m + k], abs=1e-10)


def test_monitored_order_permutes_rows(meshed):
    grid, sol, sens = meshed
    rev = list(reversed(sens.monitored_buses))
    other = compute_sensitivity(grid, sol, monitored_buses=rev)
    assert np.array_equal(other.a_vq, sens.a_vq[::-1])
    assert np.array_equal(other.a_vp, sens.a_vp[::-1])
    assert other.v_row(rev[0]) == 0


def test_linear_prediction_within_budget(meshed):
    grid, sol, sens = meshed
    mon = list(sens.monitored_buses)
    for d in sens.dg_ids:
        j = sens.col(d)
        g = grid.dg(d)
        moved = solve_power_flow(grid.with_dg(replace(g, q0=g.q0 + 0.3)))
        pred = sol.v[mon] + sens.a_vq[:, j] * 0.3
        assert np.max(np.abs(pred - moved.v[mon])) <= 5e-3
    x = np.full(len(sens.dg_ids), 0.3 / len(sens.dg_ids))
    both = grid
    for g in grid.dgs:
        both = both.with_dg(replace(g, q0=g.q0 + x[0]))
    moved = solve_power_flow(both)
    assert np.max(np.abs(sol.v[mon] + sens.a_vq @ x - moved.v[mon])) <= 5e-3


def test_sensitivity_needs_converged_solution():
    grid = replace(fixtures.two_bus(), loads=(Load(1, 6.0, 1.0),))
    with pytest.raises(ValueError):
        compute_sensitivity(grid, solve_power_flow(grid))
