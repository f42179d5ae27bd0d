"""Small dense linear programs with max-min / min-max objectives.

A max-min problem ``maximize min_i x_i`` becomes linear by adding one free
variable ``y`` with ``x_i >= y`` and maximizing ``y``. Min-max is handled by
negation: ``min max x_i == -max min (-x_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

MAXIMIZE_MIN = "maximize_min"
MINIMIZE_MAX = "minimize_max"
MAXIMIZE_LINEAR = "maximize_linear"
LE = "<="
GE = ">="

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-10


class LpError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    coeffs: tuple[float, ...]
    relation: str
    rhs: float


@dataclass(frozen=True)
class LpProblem:
    n_vars: int
    objective: str
    bounds: tuple[tuple[float, float], ...]
    constraints: tuple[Constraint, ...] = ()
    c: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.objective not in (MAXIMIZE_MIN, MINIMIZE_MAX, MAXIMIZE_LINEAR):
            raise LpError(f"unknown objective {self.objective!r}")
        if len(self.bounds) != self.n_vars:
            raise LpError("one (lower, upper) bound pair per variable is required")
        for lo, hi in self.bounds:
            if math.isnan(lo) or math.isnan(hi) or lo > hi:
                raise LpError(f"invalid bounds ({lo}, {hi})")
        for con in self.constraints:
            if len(con.coeffs) != self.n_vars:
                raise LpError("constraint row length must equal n_vars")
            if con.relation not in (LE, GE):
                raise LpError(f"unknown relation {con.relation!r}")
            if not all(math.isfinite(v) for v in con.coeffs) or not math.isfinite(con.rhs):
                raise LpError("constraint entries must be finite")
        if self.objective == MAXIMIZE_LINEAR:
            if self.c is None or len(self.c) != self.n_vars:
                raise LpError("maximize_linear needs one cost per variable")

    @property
    def size(self) -> tuple[int, int]:
        return self.n_vars, len(self.constraints)


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: tuple[float, ...] = ()
    objective_value: float = math.nan
    meta: dict = field(default_factory=dict, compare=False)


def to_standard_form(p: LpProblem) -> LpProblem:
    """Rewrite a max-min or min-max problem as a linear one with one extra variable.

    The extra variable is appended last. For min-max the objective becomes
    ``maximize -z``.
    """
    if p.objective == MAXIMIZE_LINEAR:
        raise LpError("problem is already linear")
    n = p.n_vars
    extra = []
    for i in range(n):
        row = [0.0] * (n + 1)
        row[i] = 1.0
        row[n] = -1.0
        extra.append(Constraint(tuple(row), GE if p.objective == MAXIMIZE_MIN else LE, 0.0))
    cons = tuple(Constraint(con.coeffs + (0.0,), con.relation, con.rhs) for con in p.constraints)
    c = [0.0] * (n + 1)
    c[n] = 1.0 if p.objective == MAXIMIZE_MIN else -1.0
    return LpProblem(
        n_vars=n + 1, objective=MAXIMIZE_LINEAR,
        bounds=p.bounds + ((-math.inf, math.inf),),
        constraints=cons + tuple(extra), c=tuple(c),
    )


def negate(p: LpProblem) -> LpProblem:
    """Substitute ``x -> -x``; turns min-max into max-min and back."""
    flip = {MAXIMIZE_MIN: MINIMIZE_MAX, MINIMIZE_MAX: MAXIMIZE_MIN, MAXIMIZE_LINEAR: MAXIMIZE_LINEAR}
    return LpProblem(
        n_vars=p.n_vars, objective=flip[p.objective],
        bounds=tuple((-hi, -lo) for lo, hi in p.bounds),
        constraints=tuple(Constraint(tuple(-a for a in con.coeffs), con.relation, con.rhs)
                          for con in p.constraints),
        c=None if p.c is None else tuple(-v for v in p.c),
    )


def _solve_linear(p: LpProblem, feas_tol: float, pivot_tol: float) -> LpSolution:
    n, m = p.n_vars, len(p.constraints)
    A = np.zeros((m, n + m))
    b = np.zeros(m)
    lo = np.empty(n + m)
    hi = np.empty(n + m)
    for j, (l, h) in enumerate(p.bounds):
        lo[j], hi[j] = l, h
    for i, con in enumerate(p.constraints):
        A[i, :n] = con.coeffs
        A[i, n + i] = 1.0
        b[i] = con.rhs
        if con.relation == LE:
            lo[n + i], hi[n + i] = 0.0, math.inf
        else:
            lo[n + i], hi[n + i] = -math.inf, 0.0
    slack_col = np.arange(n, n + m, dtype=np.int64)
    cost = np.zeros(n + m)
    cost[:n] = p.c
    code, x = kernels.bounded_simplex(A, b, cost, lo, hi, slack_col, feas_tol, pivot_tol)
    if code == kernels.INFEASIBLE:
        return LpSolution("infeasible")
    if code == kernels.UNBOUNDED:
        return LpSolution("unbounded")
    if code != kernels.OPTIMAL:
        raise LpError("simplex iteration limit reached")
    xs = x[:n]
    obj = 0.0
    for cj, xj in zip(p.c, xs):
        obj += cj * xj
    return LpSolution("optimal", tuple(float(v) for v in xs), float(obj))


def solve(p: LpProblem, feas_tol: float = FEAS_TOL, pivot_tol: float = PIVOT_TOL) -> LpSolution:
    """Solve ``p``; the returned ``x`` covers only the problem's own variables.

    For max-min the objective value is ``y = min x_i``; for min-max it is
    ``z = max x_i``.
    """
    if p.objective == MAXIMIZE_LINEAR:
        return _solve_linear(p, feas_tol, pivot_tol)
    if p.objective == MINIMIZE_MAX:
        neg = solve(negate(p), feas_tol, pivot_tol)
        if neg.status != "optimal":
            return neg
        return LpSolution("optimal", tuple(-v for v in neg.x), -neg.objective_value)
    sol = _solve_linear(to_standard_form(p), feas_tol, pivot_tol)
    if sol.status != "optimal":
        return sol
    return LpSolution("optimal", sol.x[:p.n_vars], sol.x[p.n_vars])


def max_violation(p: LpProblem, x: Sequence[float]) -> float:
    """Largest amount by which ``x`` breaks a bound or constraint of ``p`` (0 if none)."""
    worst = 0.0
    for (lo, hi), v in zip(p.bounds, x):
        worst = max(worst, lo - v, v - hi)
    for con in p.constraints:
        lhs = float(np.dot(con.coeffs, x))
        worst = max(worst, lhs - con.rhs if con.relation == LE else con.rhs - lhs)
    return worst
