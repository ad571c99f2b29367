"""Dense bounded-variable simplex kernels.

Hot loops for the LP machinery. With numba installed these JIT-compile (and
cache to disk); without it the same functions run as plain Python over numpy
arrays, bit-identical but slow.

Layout conventions shared with lp.TableauLP:
  - equality system A x = b over boxed columns; callers append one slack
    column per row, and fully free columns are split upstream
  - vstat: 0 nonbasic at lower bound, 1 nonbasic at upper bound, 2 basic
  - Tab = B^-1 A (dense), xB = current basic values, d = reduced costs
  - status codes: 0 optimal, 1 infeasible, 2 unbounded, 3 stalled/unstable

Dantzig pricing switches to Bland's rule after 48 consecutive degenerate
pivots and back on the first real step. All tie-breaks are lowest-index so
repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


OPT_TOL = 1e-9
FEAS_TOL = 1e-9
PIV_TOL = 1e-9
DEGEN_LIMIT = 48


@njit(cache=True)
def primal_simplex(Tab, xB, basis, vstat, lo, hi, d, n_price, max_iter):
    """Minimize over the current tableau until optimal/unbounded/stalled.

    Returns (status, iterations, entering_col, entering_dir); the last two
    identify the unbounded ray when status == 2 and are -1/0.0 otherwise.
    """
    m = xB.shape[0]
    ncol = d.shape[0]
    degen = 0
    bland = False
    it = 0
    while it < max_iter:
        it += 1
        # pricing
        j_in = -1
        best = OPT_TOL
        dirn = 0.0
        for j in range(n_price):
            st = vstat[j]
            if st == 2:
                continue
            if lo[j] == hi[j]:
                continue
            dj = d[j]
            if st == 0:
                if dj < -OPT_TOL:
                    if bland:
                        j_in = j
                        dirn = 1.0
                        break
                    if -dj > best:
                        best = -dj
                        j_in = j
                        dirn = 1.0
            else:
                if dj > OPT_TOL:
                    if bland:
                        j_in = j
                        dirn = -1.0
                        break
                    if dj > best:
                        best = dj
                        j_in = j
                        dirn = -1.0
        if j_in == -1:
            return (0, it, -1, 0.0)

        # ratio test: smallest step blocks; ties to lowest basis index
        step = hi[j_in] - lo[j_in]  # bound-flip cap, may be inf
        r_leave = -1
        leave_to = 0
        for i in range(m):
            a = Tab[i, j_in] * dirn
            if a > PIV_TOL:
                k = basis[i]
                if lo[k] == -np.inf:
                    continue
                rr = (xB[i] - lo[k]) / a
                to = 0
            elif a < -PIV_TOL:
                k = basis[i]
                if hi[k] == np.inf:
                    continue
                rr = (hi[k] - xB[i]) / (-a)
                to = 1
            else:
                continue
            if rr < 0.0:
                rr = 0.0
            if rr < step - 1e-12:
                step = rr
                r_leave = i
                leave_to = to
            elif r_leave >= 0 and rr < step + 1e-12 and basis[i] < basis[r_leave]:
                r_leave = i
                leave_to = to

        if r_leave == -1:
            if not np.isfinite(step):
                return (2, it, j_in, dirn)
            # bound flip, no basis change
            delta = dirn * step
            for i in range(m):
                xB[i] -= delta * Tab[i, j_in]
            vstat[j_in] = 1 - vstat[j_in]
            degen = 0
            continue

        p = Tab[r_leave, j_in]
        if abs(p) < PIV_TOL:
            return (3, it, -1, 0.0)
        delta = dirn * step
        if delta != 0.0:
            for i in range(m):
                xB[i] -= delta * Tab[i, j_in]
        if vstat[j_in] == 0:
            enter_val = lo[j_in] + delta
        else:
            enter_val = hi[j_in] + delta
        k_out = basis[r_leave]

        inv = 1.0 / p
        for c in range(ncol):
            Tab[r_leave, c] *= inv
        Tab[r_leave, j_in] = 1.0
        for i in range(m):
            if i == r_leave:
                continue
            f = Tab[i, j_in]
            if f != 0.0:
                for c in range(ncol):
                    Tab[i, c] -= f * Tab[r_leave, c]
                Tab[i, j_in] = 0.0
        f = d[j_in]
        if f != 0.0:
            for c in range(ncol):
                d[c] -= f * Tab[r_leave, c]
            d[j_in] = 0.0

        xB[r_leave] = enter_val
        basis[r_leave] = j_in
        vstat[j_in] = 2
        vstat[k_out] = leave_to

        if step > 1e-11:
            degen = 0
            bland = False
        else:
            degen += 1
            if degen > DEGEN_LIMIT:
                bland = True
    return (3, it, -1, 0.0)


@njit(cache=True)
def dual_simplex(Tab, xB, basis, vstat, lo, hi, d, n_price, max_iter):
    """Restore primal feasibility keeping dual feasibility.

    Assumes d is dual-feasible for the current vstat (within tolerance).
    Returns (status, iterations): 0 primal feasible, 1 infeasible, 3 stalled.
    """
    m = xB.shape[0]
    ncol = d.shape[0]
    degen = 0
    bland = False
    it = 0
    while it < max_iter:
        it += 1
        r = -1
        worst = 10.0 * FEAS_TOL
        to_kind = 0
        for i in range(m):
            k = basis[i]
            x = xB[i]
            v = lo[k] - x
            if v > worst:
                worst = v
                r = i
                to_kind = 0
                if bland:
                    break
            v = x - hi[k]
            if v > worst:
                worst = v
                r = i
                to_kind = 1
                if bland:
                    break
        if r == -1:
            return (0, it)

        # dual ratio test; admissibility moves the leaving value toward its bound
        j_in = -1
        best = np.inf
        for j in range(n_price):
            st = vstat[j]
            if st == 2:
                continue
            if lo[j] == hi[j]:
                continue
            w = Tab[r, j]
            if to_kind == 0:
                if st == 0:
                    if w >= -PIV_TOL:
                        continue
                    ratio = d[j] / (-w)
                else:
                    if w <= PIV_TOL:
                        continue
                    ratio = (-d[j]) / w
            else:
                if st == 0:
                    if w <= PIV_TOL:
                        continue
                    ratio = d[j] / w
                else:
                    if w >= -PIV_TOL:
                        continue
                    ratio = (-d[j]) / (-w)
            if ratio < 0.0:
                ratio = 0.0
            if ratio < best - 1e-12:
                best = ratio
                j_in = j
                if bland and ratio <= 0.0:
                    break
            elif j_in >= 0 and ratio < best + 1e-12 and j < j_in:
                j_in = j
        if j_in == -1:
            return (1, it)

        k_out = basis[r]
        if to_kind == 0:
            target = lo[k_out]
        else:
            target = hi[k_out]
        w = Tab[r, j_in]
        delta = (xB[r] - target) / w
        for i in range(m):
            xB[i] -= delta * Tab[i, j_in]
        if vstat[j_in] == 0:
            enter_val = lo[j_in] + delta
        else:
            enter_val = hi[j_in] + delta

        inv = 1.0 / w
        for c in range(ncol):
            Tab[r, c] *= inv
        Tab[r, j_in] = 1.0
        for i in range(m):
            if i == r:
                continue
            f = Tab[i, j_in]
            if f != 0.0:
                for c in range(ncol):
                    Tab[i, c] -= f * Tab[r, c]
                Tab[i, j_in] = 0.0
        f = d[j_in]
        if f != 0.0:
            for c in range(ncol):
                d[c] -= f * Tab[r, c]
            d[j_in] = 0.0

        xB[r] = enter_val
        basis[r] = j_in
        vstat[j_in] = 2
        vstat[k_out] = to_kind

        if abs(delta) > 1e-11:
            degen = 0
            bland = False
        else:
            degen += 1
            if degen > DEGEN_LIMIT:
                bland = True
    return (3, it)


@njit(cache=True)
def refactor(Aext, b, Tab, xB, basis, vstat, lo, hi, c, d):
    """Rebuild Tab, xB, d from original data for the current basis."""
    m = xB.shape[0]
    ncol = d.shape[0]
    B = np.empty((m, m))
    for i in range(m):
        for t in range(m):
            B[i, t] = Aext[i, basis[t]]
    Binv = np.linalg.inv(B)
    T = Binv @ Aext[:, :ncol]
    for i in range(m):
        for j in range(ncol):
            Tab[i, j] = T[i, j]
    resid = b.copy()
    for j in range(ncol):
        if vstat[j] != 2:
            vj = lo[j] if vstat[j] == 0 else hi[j]
            if vj != 0.0:
                for i in range(m):
                    resid[i] -= Aext[i, j] * vj
    xb = Binv @ resid
    for i in range(m):
        xB[i] = xb[i]
    cb = np.empty(m)
    for i in range(m):
        cb[i] = c[basis[i]]
    y = Binv.T @ cb
    for j in range(ncol):
        s = c[j]
        for i in range(m):
            s -= Aext[i, j] * y[i]
        d[j] = s
    for i in range(m):
        d[basis[i]] = 0.0


@njit(cache=True)
def full_solve(A, rel, b, c, lo, hi, max_iter):
    """Self-contained cold solve of min c.x s.t. A x (rel) b, lo <= x <= hi.

    rel: -1 for <=, 0 for ==, +1 for >=. Columns must not be free in both
    directions (split upstream). Returns (status, objective, x) with status
    0 optimal, 1 infeasible, 2 unbounded, 3 stalled.

    Allocates its own workspace; meant for high-volume small LPs inside
    compiled enumeration loops.
    """
    m, n = A.shape
    N = n + m
    Aext = np.zeros((m, N + m))
    for i in range(m):
        for j in range(n):
            Aext[i, j] = A[i, j]
        Aext[i, n + i] = 1.0
    loe = np.empty(N + m)
    hie = np.empty(N + m)
    for j in range(n):
        loe[j] = lo[j]
        hie[j] = hi[j]
    for i in range(m):
        if rel[i] == -1:
            loe[n + i] = 0.0
            hie[n + i] = np.inf
        elif rel[i] == 0:
            loe[n + i] = 0.0
            hie[n + i] = 0.0
        else:
            loe[n + i] = -np.inf
            hie[n + i] = 0.0

    vstat = np.empty(N + m, dtype=np.int8)
    for j in range(n):
        if loe[j] == -np.inf and hie[j] == np.inf:
            return (3, 0.0, np.zeros(n))  # free column: caller must split
        if loe[j] > -np.inf:
            vstat[j] = 0
        else:
            vstat[j] = 1

    basis = np.empty(m, dtype=np.int64)
    xB = np.empty(m)
    n_art = 0
    # residual of each row at the nonbasic structural point
    for i in range(m):
        v = b[i]
        for j in range(n):
            xj = loe[j] if vstat[j] == 0 else hie[j]
            if xj != 0.0:
                v -= Aext[i, j] * xj
        # try slack basic at value v
        if loe[n + i] - FEAS_TOL <= v <= hie[n + i] + FEAS_TOL:
            basis[i] = n + i
            xB[i] = v
            vstat[n + i] = 2
        else:
            sv = loe[n + i] if v < loe[n + i] else hie[n + i]
            vstat[n + i] = 0 if sv == loe[n + i] else 1
            r = v - sv
            col = N + n_art
            Aext[i, col] = 1.0 if r >= 0.0 else -1.0
            loe[col] = 0.0
            hie[col] = np.inf
            vstat[col] = 2
            basis[i] = col
            xB[i] = abs(r)
            n_art += 1

    ncol = N + n_art
    Tab = np.empty((m, ncol))
    for i in range(m):
        sgn = 1.0
        if basis[i] >= N and Aext[i, basis[i]] < 0.0:
            sgn = -1.0
        for j in range(ncol):
            Tab[i, j] = sgn * Aext[i, j]

    d = np.zeros(ncol)
    if n_art > 0:
        # phase 1: minimize artificial sum
        for j in range(ncol):
            s = 1.0 if j >= N else 0.0
            for i in range(m):
                if basis[i] >= N:
                    s -= Tab[i, j]
            d[j] = s
        for i in range(m):
            d[basis[i]] = 0.0
        st, _, _, _ = primal_simplex(
            Tab, xB, basis, vstat, loe[:ncol], hie[:ncol], d, ncol, max_iter
        )
        if st == 3:
            return (3, 0.0, np.zeros(n))
        inf_sum = 0.0
        for i in range(m):
            if basis[i] >= N:
                inf_sum += xB[i]
        if inf_sum > 1e-8:
            return (1, inf_sum, np.zeros(n))
        for j in range(N, ncol):
            loe[j] = 0.0
            hie[j] = 0.0

    # phase 2 reduced costs for the true objective
    for j in range(ncol):
        s = c[j] if j < n else 0.0
        for i in range(m):
            bi = basis[i]
            cb = c[bi] if bi < n else 0.0
            if cb != 0.0:
                s -= cb * Tab[i, j]
        d[j] = s
    for i in range(m):
        d[basis[i]] = 0.0
    st, _, _, _ = primal_simplex(
        Tab, xB, basis, vstat, loe[:ncol], hie[:ncol], d, ncol, max_iter
    )
    x = np.empty(n)
    for j in range(n):
        if vstat[j] == 2:
            x[j] = 0.0
        else:
            x[j] = loe[j] if vstat[j] == 0 else hie[j]
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = xB[i]
    obj = 0.0
    for j in range(n):
        obj += c[j] * x[j]
    if st == 0:
        return (0, obj, x)
    if st == 2:
        return (2, obj, x)
    return (3, obj, x)
