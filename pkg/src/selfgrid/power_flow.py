"""Polar Newton-Raphson power flow, injection sensitivities and losses.

All buses except the slack are PQ buses; DG output enters as negative load.
The Newton iteration runs separately on every island left after removing the
slack bus. The Jacobian is block diagonal over those islands anyway, and
solving them apart keeps each island's iterate bitwise independent of what
happens electrically in the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid_model import GridModel, _components

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 30


class SingularJacobianError(RuntimeError):
    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        msg = f"singular Jacobian at iteration {iteration}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


@dataclass
class PowerFlowSolution:
    v: np.ndarray
    theta: np.ndarray
    converged: bool
    iterations: int
    mismatch_inf_norm: float
    tol: float = DEFAULT_TOL

    @property
    def complex_voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


@dataclass
class SensitivityMatrix:
    """Columns of the inverse power-flow Jacobian for a set of DG injections.

    ``a_vp``/``a_vq`` have one row per monitored bus, ``a_theta_p``/``a_theta_q``
    one row per transformer terminal bus; every matrix has one column per DG.
    """

    a_vp: np.ndarray
    a_vq: np.ndarray
    a_theta_p: np.ndarray
    a_theta_q: np.ndarray
    monitored_buses: tuple[int, ...]
    terminal_buses: tuple[int, ...]
    dg_ids: tuple[int, ...]
    _vrow: dict = field(init=False, repr=False)
    _trow: dict = field(init=False, repr=False)
    _col: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._vrow = {b: i for i, b in enumerate(self.monitored_buses)}
        self._trow = {b: i for i, b in enumerate(self.terminal_buses)}
        self._col = {d: j for j, d in enumerate(self.dg_ids)}

    def v_row(self, bus: int) -> int:
        return self._vrow[bus]

    def theta_row(self, bus: int) -> int:
        return self._trow[bus]

    def col(self, dg_id: int) -> int:
        return self._col[dg_id]

    def voltage_block(self, mode: str) -> np.ndarray:
        return self.a_vq if mode == "pfc" else self.a_vp

    def theta_block(self, mode: str) -> np.ndarray:
        return self.a_theta_q if mode == "pfc" else self.a_theta_p


# --------------------------------------------------------------------------
# network matrices


def build_ybus(grid: GridModel) -> sp.csr_matrix:
    """Bus admittance matrix with pi-model lines and complex-tap transformers."""
    n = grid.n_bus
    rows, cols, vals = [], [], []
    for f, t, yff, yft, ytf, ytt in branch_terms(grid):
        rows.extend((f, f, t, t))
        cols.extend((f, t, f, t))
        vals.extend((yff, yft, ytf, ytt))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


def branch_terms(grid: GridModel):
    """Per-element (from, to, yff, yft, ytf, ytt) for branches then transformers."""
    out = []
    for br in grid.branches:
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        out.append((br.from_bus, br.to_bus, ys + ysh, -ys, -ys, ys + ysh))
    for tr in grid.transformers:
        ys = 1.0 / complex(tr.r, tr.x)
        a = tr.tap * np.exp(1j * tr.theta_shift)
        out.append((tr.primary_bus, tr.secondary_bus,
                    ys / (tr.tap * tr.tap), -ys / np.conj(a), -ys / a, ys))
    return out


def scheduled_injection(grid: GridModel) -> np.ndarray:
    """Net specified complex injection per bus: available DG output minus load."""
    s = np.zeros(grid.n_bus, dtype=complex)
    for ld in grid.loads:
        s[ld.bus] -= complex(ld.p, ld.q)
    for g in grid.dgs:
        if g.available:
            s[g.bus] += complex(g.p0, g.q0)
    return s


def islands(grid: GridModel) -> list[np.ndarray]:
    """Connected components of the network once the slack bus is removed."""
    slack = grid.slack_bus
    edges = [(br.from_bus, br.to_bus) for br in grid.branches]
    edges += [(t.primary_bus, t.secondary_bus) for t in grid.transformers]
    edges = [(a, b) for a, b in edges if a != slack and b != slack]
    comps = _components(grid.n_bus, edges)
    return [np.array(c, dtype=np.intp) for c in comps if c != [slack]]


def _jacobian(ybus: sp.csr_matrix, V: np.ndarray, pv: np.ndarray, pq: np.ndarray) -> sp.csc_matrix:
    ibus = ybus @ V
    vnorm = V / np.abs(V)
    diag_v = sp.diags(V)
    ds_dvm = diag_v @ np.conj(ybus @ sp.diags(vnorm)) + np.conj(sp.diags(ibus)) @ sp.diags(vnorm)
    ds_dva = 1j * diag_v @ np.conj(sp.diags(ibus) - ybus @ diag_v)
    ds_dvm = sp.csr_matrix(ds_dvm)
    ds_dva = sp.csr_matrix(ds_dva)
    j11 = ds_dva[pv][:, pv].real
    j12 = ds_dvm[pv][:, pq].real
    j21 = ds_dva[pq][:, pv].imag
    j22 = ds_dvm[pq][:, pq].imag
    return sp.csc_matrix(sp.bmat([[j11, j12], [j21, j22]]))


def _mismatch(ybus, V, s_spec, idx):
    s_calc = V * np.conj(ybus @ V)
    mis = s_calc - s_spec
    return np.concatenate([mis[idx].real, mis[idx].imag])


def solve_power_flow(grid: GridModel, init: PowerFlowSolution | None = None,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> PowerFlowSolution:
    """Solve the AC power flow; ``init=None`` is a flat start.

    Non-convergence is reported through ``converged=False`` with the last
    iterate, not raised.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = grid.n_bus
    slack = grid.slack_bus
    v_set = next(b.v_set for b in grid.buses if b.id == slack)
    if init is None:
        vm = np.ones(n)
        va = np.zeros(n)
    else:
        vm = np.array(init.v, dtype=float)
        va = np.array(init.theta, dtype=float)
    vm[slack] = v_set
    va[slack] = 0.0
    ybus = build_ybus(grid)
    s_spec = scheduled_injection(grid)

    worst = 0.0
    iters = 0
    converged = True
    for isl in islands(grid):
        m = len(isl)
        it = 0
        while True:
            V = vm * np.exp(1j * va)
            F = _mismatch(ybus, V, s_spec, isl)
            norm = float(np.max(np.abs(F))) if m else 0.0
            if norm <= tol or it >= max_iter:
                break
            it += 1
            J = _jacobian(ybus, V, isl, isl)
            try:
                dx = splu(J).solve(-F)
            except RuntimeError as exc:
                raise SingularJacobianError(it, str(exc)) from exc
            if not np.all(np.isfinite(dx)):
                raise SingularJacobianError(it, "non-finite Newton step")
            va[isl] += dx[:m]
            vm[isl] += dx[m:]
        converged = converged and norm <= tol
        worst = max(worst, norm)
        iters = max(iters, it)
    return PowerFlowSolution(v=vm, theta=va, converged=converged, iterations=iters,
                             mismatch_inf_norm=worst, tol=tol)


def full_jacobian(grid: GridModel, sol: PowerFlowSolution) -> tuple[sp.csc_matrix, np.ndarray]:
    """Jacobian over every non-slack bus; returns it with the bus order used."""
    order = np.array([b.id for b in grid.buses if b.id != grid.slack_bus], dtype=np.intp)
    return _jacobian(build_ybus(grid), sol.complex_voltage, order, order), order


def compute_sensitivity(grid: GridModel, sol: PowerFlowSolution,
                        dg_ids: list[int] | None = None,
                        monitored_buses: list[int] | None = None) -> SensitivityMatrix:
    """Sensitivity of bus voltages and transformer terminal angles to DG injections.

    Each column comes from one sparse solve ``J @ col = e_k`` against the
    factored Jacobian; the dense inverse is never formed.
    """
    if not sol.converged:
        raise ValueError("sensitivity requires a converged power flow")
    if dg_ids is None:
        dg_ids = [g.id for g in grid.dgs]
    if monitored_buses is None:
        monitored_buses = grid.monitored_buses()
    terminals = grid.transformer_terminals()
    J, order = full_jacobian(grid, sol)
    m = len(order)
    pos = {int(b): i for i, b in enumerate(order)}
    try:
        lu = splu(J)
    except RuntimeError as exc:
        raise SingularJacobianError(0, str(exc)) from exc

    k = len(dg_ids)
    rhs = np.zeros((2 * m, 2 * k))
    for j, d in enumerate(dg_ids):
        bus = grid.dg(d).bus
        if bus in pos:
            rhs[pos[bus], j] = 1.0
            rhs[m + pos[bus], k + j] = 1.0
    cols = lu.solve(rhs) if k else rhs
    if not np.all(np.isfinite(cols)):
        raise SingularJacobianError(0, "non-finite sensitivity columns")

    def rows(buses, offset):
        out = np.zeros((len(buses), 2 * k))
        for i, b in enumerate(buses):
            if b in pos:
                out[i] = cols[offset + pos[b]]
        return out

    vrows = rows(monitored_buses, m)
    trows = rows(terminals, 0)
    return SensitivityMatrix(
        a_vp=vrows[:, :k].copy(), a_vq=vrows[:, k:].copy(),
        a_theta_p=trows[:, :k].copy(), a_theta_q=trows[:, k:].copy(),
        monitored_buses=tuple(monitored_buses), terminal_buses=tuple(terminals),
        dg_ids=tuple(dg_ids),
    )


def branch_flows(grid: GridModel, sol: PowerFlowSolution) -> list[tuple[complex, complex]]:
    """Complex power entering each element at its from and to ends."""
    V = sol.complex_voltage
    out = []
    for f, t, yff, yft, ytf, ytt in branch_terms(grid):
        i_f = yff * V[f] + yft * V[t]
        i_t = ytf * V[f] + ytt * V[t]
        out.append((V[f] * np.conj(i_f), V[t] * np.conj(i_t)))
    return out


def compute_losses(grid: GridModel, sol: PowerFlowSolution) -> tuple[float, float]:
    """Total active and reactive series losses, net of line charging."""
    total = sum((sf + st for sf, st in branch_flows(grid, sol)), 0j)
    return float(total.real), float(total.imag)


def slack_injection(grid: GridModel, sol: PowerFlowSolution) -> complex:
    V = sol.complex_voltage
    s = grid.slack_bus
    return complex(V[s] * np.conj((build_ybus(grid) @ V)[s]))
