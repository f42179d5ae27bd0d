# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels (simplex pivoting, union-find).

Mirrors ``_kernels_py`` operation for operation; keep the two in step.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

cdef enum:
    OPTIMAL = 0
    INFEASIBLE = 1
    UNBOUNDED = 2
    ITERATION_LIMIT = 3


cdef Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t a) noexcept nogil:
    cdef Py_ssize_t root = a, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


def components(Py_ssize_t n, edges_u, edges_v):
    cdef cnp.int64_t[::1] eu = np.ascontiguousarray(edges_u, dtype=np.int64)
    cdef cnp.int64_t[::1] ev = np.ascontiguousarray(edges_v, dtype=np.int64)
    cdef Py_ssize_t[::1] parent = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t k, ra, rb, i
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] lab = out
    with nogil:
        for k in range(eu.shape[0]):
            ra = _find(parent, <Py_ssize_t>eu[k])
            rb = _find(parent, <Py_ssize_t>ev[k])
            if ra != rb:
                if ra < rb:
                    parent[rb] = ra
                else:
                    parent[ra] = rb
        for i in range(n):
            lab[i] = _find(parent, i)
    return out


cdef void _pivot(double[:, ::1] T, double[::1] d, cnp.int64_t[::1] basis,
                 Py_ssize_t r, Py_ssize_t q) noexcept nogil:
    cdef Py_ssize_t m = T.shape[0], ntot = T.shape[1], i, j
    cdef double piv = T[r, q], f, dq
    for j in range(ntot):
        T[r, j] = T[r, j] / piv
    for i in range(m):
        if i == r:
            continue
        f = T[i, q]
        if f != 0.0:
            for j in range(ntot):
                T[i, j] = T[i, j] - f * T[r, j]
    dq = d[q]
    if dq != 0.0:
        for j in range(ntot):
            d[j] = d[j] - dq * T[r, j]
    basis[r] = q


cdef void _reduced_costs(double[::1] c, double[:, ::1] T, cnp.int64_t[::1] basis,
                         double[::1] d) noexcept nogil:
    cdef Py_ssize_t m = T.shape[0], ntot = T.shape[1], i, j
    cdef double cb
    for j in range(ntot):
        d[j] = c[j]
    for i in range(m):
        cb = c[basis[i]]
        if cb != 0.0:
            for j in range(ntot):
                d[j] = d[j] - cb * T[i, j]


cdef int _run(double[:, ::1] T, double[::1] d, cnp.int64_t[::1] basis, double[::1] x,
              double[::1] lo, double[::1] hi, char[::1] is_basic, double pivot_tol,
              long max_iter, long* iters) noexcept nogil:
    cdef Py_ssize_t m = T.shape[0], ntot = T.shape[1], i, j, q, leave, b, out
    cdef Py_ssize_t leave_var
    cdef double direction, dj, step, t, delta, lim, move
    cdef bint to_hi, leave_to_hi
    for i in range(ntot):
        is_basic[i] = 0
    for i in range(m):
        is_basic[basis[i]] = 1
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
                q = j
                direction = 1.0
                break
            if dj < -pivot_tol and x[j] > lo[j]:
                q = j
                direction = -1.0
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
                if lo[b] == -INFINITY:
                    continue
                lim = (x[b] - lo[b]) / -delta
                to_hi = False
            else:
                if hi[b] == INFINITY:
                    continue
                lim = (hi[b] - x[b]) / delta
                to_hi = True
            if lim < 0.0:
                lim = 0.0
            if lim < step or (lim == step and leave >= 0 and b < leave_var):
                step = lim
                leave = i
                leave_var = b
                leave_to_hi = to_hi
        if step == INFINITY:
            return UNBOUNDED

        if step != 0.0:
            move = direction * step
            x[q] = x[q] + move
            for i in range(m):
                t = T[i, q]
                if t != 0.0:
                    x[basis[i]] = x[basis[i]] - move * t
        if leave < 0:
            x[q] = hi[q] if direction > 0 else lo[q]
            continue
        out = basis[leave]
        x[out] = hi[out] if leave_to_hi else lo[out]
        is_basic[out] = 0
        is_basic[q] = 1
        _pivot(T, d, basis, leave, q)


def bounded_simplex(A, b, c, lo, hi, slack_col, double feas_tol=1e-9,
                    double pivot_tol=1e-10, long max_iter=50000):
    A_arr = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t m = A_arr.shape[0], n = A_arr.shape[1], ntot = n + m, i, j, s
    cdef double[:, ::1] Av = A_arr
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef cnp.int64_t[::1] sc = np.ascontiguousarray(slack_col, dtype=np.int64)
    lo_arr = np.concatenate([np.asarray(lo, dtype=np.float64), np.zeros(m)])
    hi_arr = np.concatenate([np.asarray(hi, dtype=np.float64), np.full(m, np.inf)])
    cdef double[::1] lov = lo_arr
    cdef double[::1] hiv = hi_arr
    x_arr = np.zeros(ntot)
    cdef double[::1] x = x_arr
    T_arr = np.zeros((m, ntot))
    cdef double[:, ::1] T = T_arr
    basis_arr = np.zeros(m, dtype=np.int64)
    cdef cnp.int64_t[::1] basis = basis_arr
    cdef double[::1] d = np.zeros(ntot)
    cdef double[::1] cost = np.zeros(ntot)
    cdef char[::1] is_basic = np.zeros(ntot, dtype=np.int8)
    cdef double acc, resid, val, sign, infeas
    cdef long iters = 0
    cdef int status
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    if (cv.shape[0] != n or bv.shape[0] != m or len(lo) != n or len(hi) != n
            or sc.shape[0] != m):
        raise ValueError("inconsistent simplex input shapes")

    with nogil:
        for j in range(n):
            if lov[j] > -INFINITY:
                x[j] = lov[j]
            elif hiv[j] < INFINITY:
                x[j] = hiv[j]
        for i in range(m):
            for j in range(n):
                T[i, j] = Av[i, j]
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += Av[i, j] * x[j]
            resid = bv[i] - acc
            s = sc[i]
            if s >= 0:
                val = x[s] + resid
                if lov[s] <= val <= hiv[s]:
                    x[s] = val
                    basis[i] = s
                    T[i, n + i] = 1.0
                    lov[n + i] = 0.0
                    hiv[n + i] = 0.0
                    continue
            sign = 1.0 if resid >= 0.0 else -1.0
            for j in range(ntot):
                T[i, j] = T[i, j] * sign
            T[i, n + i] = 1.0
            x[n + i] = sign * resid
            basis[i] = n + i

        for j in range(n, ntot):
            cost[j] = -1.0
        _reduced_costs(cost, T, basis, d)
        status = _run(T, d, basis, x, lov, hiv, is_basic, pivot_tol, max_iter, &iters)
    if status == ITERATION_LIMIT:
        return status, x_arr[:n].copy()
    infeas = 0.0
    for j in range(n, ntot):
        infeas += x[j]
    if infeas > feas_tol:
        return INFEASIBLE, x_arr[:n].copy()
    with nogil:
        for j in range(n, ntot):
            lov[j] = 0.0
            hiv[j] = 0.0
            if not is_basic[j]:
                x[j] = 0.0
        for j in range(ntot):
            cost[j] = 0.0
        for j in range(n):
            cost[j] = cv[j]
        _reduced_costs(cost, T, basis, d)
        status = _run(T, d, basis, x, lov, hiv, is_basic, pivot_tol, max_iter, &iters)
    return status, x_arr[:n].copy()
