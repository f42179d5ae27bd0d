"""Pure-Python/numpy versions of the hot kernels.

Same algorithms, same operation order as ``_kernels.pyx``; the two must give
bitwise identical results so runs are reproducible whichever one is loaded.
"""

from __future__ import annotations

import math

import numpy as np

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITERATION_LIMIT = 3


def components(n: int, edges_u, edges_v) -> np.ndarray:
    """Label each of ``n`` nodes with the smallest node index in its component."""
    parent = list(range(n))

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for a, b in zip(edges_u, edges_v):
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    return np.array([find(i) for i in range(n)], dtype=np.int64)


def _pivot(T, d, basis, r, q):
    piv = T[r, q]
    T[r] /= piv
    col = T[:, q].copy()
    col[r] = 0.0
    nz = np.flatnonzero(col)
    for i in nz:
        T[i] -= col[i] * T[r]
    dq = d[q]
    if dq != 0.0:
        d -= dq * T[r]
    basis[r] = q


def _reduced_costs(c, T, basis):
    d = c.copy()
    for i in range(T.shape[0]):
        cb = c[basis[i]]
        if cb != 0.0:
            d -= cb * T[i]
    return d


def _run(T, d, basis, x, lo, hi, feas_tol, pivot_tol, max_iter, iters):
    m, ntot = T.shape
    is_basic = np.zeros(ntot, dtype=bool)
    is_basic[basis] = True
    while True:
        if iters[0] >= max_iter:
            return ITERATION_LIMIT
        q = -1
        direction = 0.0
        for j in range(ntot):
            if is_basic[j] or lo[j] == hi[j]:
                continue
            dj = d[j]
            if dj > pivot_tol and x[j] < hi[j]:
                q, direction = j, 1.0
                break
            if dj < -pivot_tol and x[j] > lo[j]:
                q, direction = j, -1.0
                break
        if q < 0:
            return OPTIMAL
        iters[0] += 1

        step = hi[q] - lo[q]
        leave = -1
        leave_var = ntot
        leave_to_hi = False
        for i in range(m):
            t = T[i, q]
            if -pivot_tol < t < pivot_tol:
                continue
            delta = -direction * t
            b = basis[i]
            if delta < 0.0:
                if lo[b] == -math.inf:
                    continue
                lim = (x[b] - lo[b]) / -delta
                to_hi = False
            else:
                if hi[b] == math.inf:
                    continue
                lim = (hi[b] - x[b]) / delta
                to_hi = True
            if lim < 0.0:
                lim = 0.0
            if lim < step or (lim == step and leave >= 0 and b < leave_var):
                step, leave, leave_var, leave_to_hi = lim, i, b, to_hi
        if step == math.inf:
            return UNBOUNDED

        if step != 0.0:
            move = direction * step
            x[q] += move
            for i in range(m):
                t = T[i, q]
                if t != 0.0:
                    x[basis[i]] -= move * t
        if leave < 0:
            x[q] = hi[q] if direction > 0 else lo[q]
            continue
        out = basis[leave]
        x[out] = hi[out] if leave_to_hi else lo[out]
        is_basic[out] = False
        is_basic[q] = True
        _pivot(T, d, basis, leave, q)


def bounded_simplex(A, b, c, lo, hi, slack_col, feas_tol=1e-9, pivot_tol=1e-10, max_iter=50000):
    """Maximize ``c @ x`` subject to ``A @ x == b`` and ``lo <= x <= hi``.

    Two-phase bounded-variable primal simplex on a dense tableau with Bland's
    lowest-index rule for both entering and leaving choices. ``slack_col[i]``
    names a column that appears only in row ``i`` with coefficient one (or -1
    if none); it seeds the starting basis whenever its bounds allow.

    Returns ``(status, x)``.
    """
    A = np.asarray(A, dtype=np.float64)
    m, n = A.shape
    ntot = n + m
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (n,) or len(b) != m or len(lo) != n or len(hi) != n or len(slack_col) != m:
        raise ValueError("inconsistent simplex input shapes")
    lo = np.concatenate([np.asarray(lo, dtype=np.float64), np.zeros(m)])
    hi = np.concatenate([np.asarray(hi, dtype=np.float64), np.full(m, math.inf)])
    x = np.zeros(ntot)
    for j in range(n):
        if lo[j] > -math.inf:
            x[j] = lo[j]
        elif hi[j] < math.inf:
            x[j] = hi[j]

    T = np.zeros((m, ntot))
    T[:, :n] = A
    basis = np.zeros(m, dtype=np.int64)
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += A[i, j] * x[j]
        resid = b[i] - acc
        s = slack_col[i]
        if s >= 0:
            val = x[s] + resid
            if lo[s] <= val <= hi[s]:
                x[s] = val
                basis[i] = s
                T[i, n + i] = 1.0
                lo[n + i] = hi[n + i] = 0.0
                continue
        sign = 1.0 if resid >= 0.0 else -1.0
        T[i] *= sign
        T[i, n + i] = 1.0
        x[n + i] = sign * resid
        basis[i] = n + i

    iters = [0]
    c1 = np.zeros(ntot)
    c1[n:] = -1.0
    d = _reduced_costs(c1, T, basis)
    status = _run(T, d, basis, x, lo, hi, feas_tol, pivot_tol, max_iter, iters)
    if status == ITERATION_LIMIT:
        return status, x[:n].copy()
    infeas = 0.0
    for j in range(n, ntot):
        infeas += x[j]
    if infeas > feas_tol:
        return INFEASIBLE, x[:n].copy()
    for j in range(n, ntot):
        lo[j] = hi[j] = 0.0
        x[j] = 0.0 if j not in basis else x[j]

    c2 = np.zeros(ntot)
    c2[:n] = c
    d = _reduced_costs(c2, T, basis)
    status = _run(T, d, basis, x, lo, hi, feas_tol, pivot_tol, max_iter, iters)
    return status, x[:n].copy()
