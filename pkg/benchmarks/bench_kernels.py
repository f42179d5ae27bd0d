"""Time the compiled kernels against the pure-Python fallback.

Both backends run the same seeded inputs; the script also checks that their
outputs agree bit for bit.

    python3 benchmarks/bench_kernels.py [--lps 1000] [--graphs 200] [--seed 0]
"""

from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from selfgrid import _kernels_py
from selfgrid.lp_solver import (FEAS_TOL, GE, LE, MAXIMIZE_MIN, MINIMIZE_MAX, Constraint, LpProblem, negate,
                               to_standard_form)

try:
    from selfgrid import _kernels
except ImportError:  # extension not built
    _kernels = None


def simplex_inputs(p: LpProblem):
    """Arrays the LP layer hands to ``bounded_simplex`` for ``p``."""
    if p.objective == MINIMIZE_MAX:
        p = negate(p)
    p = to_standard_form(p)
    n, m = p.n_vars, len(p.constraints)
    A = np.zeros((m, n + m))
    b = np.zeros(m)
    lo, hi = np.empty(n + m), np.empty(n + m)
    for j, (l, h) in enumerate(p.bounds):
        lo[j], hi[j] = l, h
    for i, con in enumerate(p.constraints):
        A[i, :n] = con.coeffs
        A[i, n + i] = 1.0
        b[i] = con.rhs
        lo[n + i], hi[n + i] = (0.0, math.inf) if con.relation == LE else (-math.inf, 0.0)
    c = np.zeros(n + m)
    c[:n] = p.c
    return A, b, c, lo, hi, np.arange(n, n + m, dtype=np.int64)


def random_lps(count: int, rng: np.random.Generator) -> list[tuple]:
    out = []
    for _ in range(count):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(2, 20))
        lo = rng.uniform(-1.0, 0.0, n)
        bounds = tuple((float(a), float(a + rng.uniform(0.3, 1.0))) for a in lo)
        center = np.array([rng.uniform(a, b) for a, b in bounds])
        cons = []
        for _ in range(m):
            row = rng.normal(size=n)
            lhs = float(row @ center)
            if rng.random() < 0.5:
                cons.append(Constraint(tuple(row), LE, lhs + float(rng.uniform(0.01, 0.3))))
            else:
                cons.append(Constraint(tuple(row), GE, lhs - float(rng.uniform(0.01, 0.3))))
        obj = MAXIMIZE_MIN if rng.random() < 0.5 else MINIMIZE_MAX
        out.append(simplex_inputs(LpProblem(n, obj, bounds, tuple(cons))))
    return out


def random_graphs(count: int, rng: np.random.Generator) -> list[tuple]:
    out = []
    for _ in range(count):
        n = int(rng.integers(200, 2000))
        e = int(rng.integers(n // 2, 2 * n))
        out.append((n, rng.integers(0, n, e), rng.integers(0, n, e)))
    return out


def bench(fn, cases, repeat: int) -> tuple[float, list]:
    best, results = math.inf, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        results = [fn(*c) for c in cases]
        best = min(best, time.perf_counter() - t0)
    return best, results


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.tobytes() == b.tobytes()
    return a == b


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lps", type=int, default=1000)
    ap.add_argument("--graphs", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    lps = random_lps(args.lps, rng)
    graphs = random_graphs(args.graphs, rng)

    print(f"{'kernel':<16}{'cases':>7}{'python s':>11}{'cython s':>11}{'speedup':>9}  identical")
    ok = True
    for name, cases, py_fn, cy_fn in (
        ("bounded_simplex", lps, lambda *a: _kernels_py.bounded_simplex(*a, FEAS_TOL),
         lambda *a: _kernels.bounded_simplex(*a, FEAS_TOL)),
        ("components", graphs, _kernels_py.components, _kernels.components),
    ):
        t_py, r_py = bench(py_fn, cases, args.repeat)
        t_cy, r_cy = bench(cy_fn, cases, args.repeat)
        agree = all(same(a, b) for a, b in zip(r_py, r_cy))
        ok &= agree
        print(f"{name:<16}{len(cases):>7}{t_py:>11.4f}{t_cy:>11.4f}{t_py / t_cy:>8.1f}x  {agree}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
