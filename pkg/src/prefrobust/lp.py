"""Linear programming over a dense bounded-variable simplex.

The solver is deliberately simple: explicit tableau, two phases with
artificial columns, Dantzig pricing with a Bland fallback on degeneracy,
and a dual simplex for warm restarts after bound changes or row additions.
Everything is deterministic; ties break to the lowest index.

Row duals follow the shadow-price convention y_i = d(objective)/d(rhs_i),
so for a minimization a binding <= row has y <= 0 and a binding >= row has
y >= 0 (mirrored for maximization).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from ._kernel import dual_simplex, primal_simplex, refactor

__all__ = [
    "LinearProgram",
    "LPSolution",
    "FeasibilityResult",
    "solve_lp",
    "check_feasibility",
    "TableauLP",
]

_REL_CODE = {"<=": -1, "<": -1, "==": 0, "=": 0, ">=": 1, ">": 1}
_FEAS_TOL = 1e-9
_REPORT_TOL = 1e-7


def _rel_array(relations) -> np.ndarray:
    out = np.empty(len(relations), dtype=np.int8)
    for i, r in enumerate(relations):
        if isinstance(r, str):
            try:
                out[i] = _REL_CODE[r]
            except KeyError:
                raise ValueError(f"unknown row relation {r!r}") from None
        else:
            v = int(r)
            if v not in (-1, 0, 1):
                raise ValueError(f"unknown row relation code {r!r}")
            out[i] = v
    return out


@dataclass
class LinearProgram:
    """min or max of c.x subject to rows A x (rel) b and box bounds.

    rel entries: -1 for <=, 0 for ==, +1 for >= (strings accepted by
    the `build` constructor). Bounds may be +-inf.
    """

    c: np.ndarray
    A: np.ndarray
    rel: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sense: str = "min"
    names: list | None = None

    @classmethod
    def build(cls, c, rows, lo=None, hi=None, sense="min", names=None):
        """rows: iterable of (coefficients, relation, rhs)."""
        c = np.asarray(c, dtype=float)
        n = c.shape[0]
        m = len(rows)
        A = np.zeros((m, n))
        rel = []
        b = np.empty(m)
        for i, (coefs, r, rhs) in enumerate(rows):
            A[i, :] = np.asarray(coefs, dtype=float)
            rel.append(r)
            b[i] = rhs
        lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float)
        hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
        return cls(c, A, _rel_array(rel), b, lo.copy(), hi.copy(), sense, names)

    def validate(self):
        m, n = self.A.shape
        if self.c.shape != (n,) or self.b.shape != (m,) or self.rel.shape != (m,):
            raise ValueError("inconsistent LP dimensions")
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("inconsistent bound dimensions")
        for arr in (self.c, self.A, self.b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("objective, matrix and rhs must be finite")
        if np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)):
            raise ValueError("bounds must not be NaN")
        if np.any(self.lo > self.hi):
            raise ValueError("crossed bounds")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")


@dataclass
class LPSolution:
    status: str  # optimal | infeasible | unbounded | unstable
    objective: float | None = None
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    ray: np.ndarray | None = None
    infeasibility: float = 0.0


@dataclass
class FeasibilityResult:
    feasible: bool
    infeasibility: float


class TableauLP:
    """Warm-startable working set for one equality-form LP.

    Owns extended arrays (structural columns, then one slack per row, then
    artificials last). Free columns are rejected: split upstream. Drivers
    may append rows and change bounds between resolves; `freeze_root` /
    `restore_root` support tree searches that rebuild node states from a
    shared root.
    """

    def __init__(self, c, A, rel, b, lo, hi):
        A = np.asarray(A, dtype=float)
        m, n = A.shape
        self.n_struct = n
        self.m = m
        free = (lo == -np.inf) & (hi == np.inf)
        if np.any(free):
            raise ValueError("TableauLP requires no fully free columns")
        ncap = n + m + 64
        mcap = m + 32
        self.Aext = np.zeros((mcap, ncap + mcap))
        self.Aext[:m, :n] = A
        self.b = np.zeros(mcap)
        self.b[:m] = b
        self.c = np.zeros(ncap + mcap)
        self.c[:n] = c
        self.lo = np.full(ncap + mcap, -np.inf)
        self.hi = np.full(ncap + mcap, np.inf)
        self.lo[:n] = lo
        self.hi[:n] = hi
        self.ncol = n
        for i in range(m):
            self._append_slack(i, rel[i])
        self.basis = np.zeros(mcap, dtype=np.int64)
        self.vstat = np.zeros(ncap + mcap, dtype=np.int8)
        self.Tab = np.zeros((mcap, ncap + mcap))
        self.xB = np.zeros(mcap)
        self.n_art = 0
        self.iterations = 0
        self.infeasibility = 0.0
        self._root = None

    # -- construction helpers -------------------------------------------

    def _append_slack(self, row, rel):
        j = self.ncol
        self.Aext[row, j] = 1.0
        if rel == -1:
            self.lo[j], self.hi[j] = 0.0, np.inf
        elif rel == 0:
            self.lo[j], self.hi[j] = 0.0, 0.0
        else:
            self.lo[j], self.hi[j] = -np.inf, 0.0
        self.c[j] = 0.0
        self.ncol += 1
        return j

    def _grow(self, add_rows, add_cols):
        mcap = self.Aext.shape[0]
        ncap = self.Aext.shape[1]
        need_m = self.m + add_rows
        need_n = self.ncol + self.n_art + add_cols + add_rows
        if need_m <= mcap and need_n <= ncap:
            return
        new_mcap = max(mcap * 2, need_m + 16)
        new_ncap = max(ncap * 2, need_n + 64)
        A2 = np.zeros((new_mcap, new_ncap))
        A2[:mcap, :ncap] = self.Aext
        self.Aext = A2
        T2 = np.zeros((new_mcap, new_ncap))
        T2[:mcap, :ncap] = self.Tab
        self.Tab = T2
        for name in ("c", "lo", "hi"):
            old = getattr(self, name)
            new = np.full(new_ncap, -np.inf if name == "lo" else np.inf)
            if name == "c":
                new = np.zeros(new_ncap)
            new[:ncap] = old
            setattr(self, name, new)
        v2 = np.zeros(new_ncap, dtype=np.int8)
        v2[:ncap] = self.vstat
        self.vstat = v2
        b2 = np.zeros(new_mcap)
        b2[:mcap] = self.b
        self.b = b2
        bs2 = np.zeros(new_mcap, dtype=np.int64)
        bs2[:mcap] = self.basis
        self.basis = bs2
        x2 = np.zeros(new_mcap)
        x2[:mcap] = self.xB
        self.xB = x2

    # -- views ------------------------------------------------------------

    def _views(self):
        m, nc = self.m, self.ncol + self.n_art
        return (
            self.Tab[:m, :nc],
            self.xB[:m],
            self.basis[:m],
            self.vstat[:nc],
            self.lo[:nc],
            self.hi[:nc],
        )

    def _max_iter(self):
        return 200 * (self.m + self.ncol) + 10_000

    # -- solving ----------------------------------------------------------

    def _initial_basis(self):
        m, n = self.m, self.ncol
        # artificials live at indices >= ncol; reset them
        self.n_art = 0
        vstat = self.vstat
        for j in range(n):
            if self.lo[j] > -np.inf:
                vstat[j] = 0
            else:
                vstat[j] = 1
        xN = np.where(vstat[:n] == 0, self.lo[:n], self.hi[:n])
        slack_start = n - m
        xN[slack_start:] = 0.0  # provisional; slacks fixed below
        for i in range(m):
            j = slack_start + i
            xN[j] = self.lo[j] if vstat[j] == 0 else self.hi[j]
            if not np.isfinite(xN[j]):
                xN[j] = 0.0
        resid = self.b[:m] - self.Aext[:m, :n] @ xN
        for i in range(m):
            sj = slack_start + i
            v = resid[i] + xN[sj]  # slack value if it were basic
            if self.lo[sj] - _FEAS_TOL <= v <= self.hi[sj] + _FEAS_TOL:
                self.basis[i] = sj
                self.vstat[sj] = 2
                self.xB[i] = v
            else:
                sv = self.lo[sj] if v < self.lo[sj] else self.hi[sj]
                self.vstat[sj] = 0 if sv == self.lo[sj] else 1
                col = n + self.n_art
                self._grow(0, 1)
                self.Aext[:m, col] = 0.0
                r = v - sv
                self.Aext[i, col] = 1.0 if r >= 0 else -1.0
                self.lo[col] = 0.0
                self.hi[col] = np.inf
                self.c[col] = 0.0
                self.vstat[col] = 2
                self.basis[i] = col
                self.xB[i] = abs(r)
                self.n_art += 1

    def _refactor(self, cost):
        m, nc = self.m, self.ncol + self.n_art
        self._d = np.zeros(nc)
        refactor(
            self.Aext[:m, :nc],
            self.b[:m],
            self.Tab[:m, :nc],
            self.xB[:m],
            self.basis[:m],
            self.vstat[:nc],
            self.lo[:nc],
            self.hi[:nc],
            cost,
            self._d,
        )

    def _phase1(self):
        """Returns residual infeasibility after phase 1 (0.0 when clean)."""
        m, n = self.m, self.ncol
        self._initial_basis()
        nc = n + self.n_art
        if self.n_art == 0:
            return 0.0
        cost = np.zeros(nc)
        cost[n:nc] = 1.0
        self._refactor(cost)
        Tab, xB, basis, vstat, lo, hi = self._views()
        st, it, _, _ = primal_simplex(
            Tab, xB, basis, vstat, lo, hi, self._d, nc, self._max_iter()
        )
        self.iterations += it
        if st == 3:
            return np.inf
        inf_sum = 0.0
        for i in range(m):
            if basis[i] >= n:
                inf_sum += max(0.0, xB[i])
        # pin artificials so they can never re-enter
        self.lo[n:nc] = 0.0
        self.hi[n:nc] = 0.0
        return inf_sum

    def solve(self):
        """Cold solve. Returns status string."""
        inf_sum = self._phase1()
        if not np.isfinite(inf_sum):
            return "unstable"
        if inf_sum > _FEAS_TOL:
            self.infeasibility = inf_sum
            return "infeasible"
        return self._phase2()

    def _phase2(self):
        m, n = self.m, self.ncol
        nc = n + self.n_art
        cost = np.zeros(nc)
        cost[:nc] = self.c[:nc]
        self._refactor(cost)
        Tab, xB, basis, vstat, lo, hi = self._views()
        st, it, j_unb, dir_unb = primal_simplex(
            Tab, xB, basis, vstat, lo, hi, self._d, nc, self._max_iter()
        )
        self.iterations += it
        if st == 2:
            self._unb = (j_unb, dir_unb)
            return "unbounded"
        if st == 3:
            return "unstable"
        if self._feas_residual() > _REPORT_TOL:
            # one repair pass: rebuild from the basis and re-optimize
            self._refactor(cost)
            st, it, j_unb, dir_unb = primal_simplex(
                Tab, xB, basis, vstat, lo, hi, self._d, nc, self._max_iter()
            )
            self.iterations += it
            if st == 2:
                self._unb = (j_unb, dir_unb)
                return "unbounded"
            if st != 0 or self._feas_residual() > _REPORT_TOL:
                return "unstable"
        return "optimal"

    def dual_resolve(self):
        """Re-optimize after bound edits / appended rows, reusing the basis."""
        m, n = self.m, self.ncol
        nc = n + self.n_art
        cost = np.zeros(nc)
        cost[:nc] = self.c[:nc]
        try:
            self._refactor(cost)
        except np.linalg.LinAlgError:
            # loaded basis singular for the current data; caller cold-solves
            return "unstable"
        Tab, xB, basis, vstat, lo, hi = self._views()
        st, it = dual_simplex(
            Tab, xB, basis, vstat, lo, hi, self._d, nc, self._max_iter()
        )
        self.iterations += it
        if st == 1:
            return "infeasible"
        if st == 3:
            return "unstable"
        # polish with the primal in case reduced costs drifted
        return self._phase2_resume()

    def resolve_with_cost(self, cost):
        """Re-optimize after replacing the structural objective, reusing
        the basis. Only valid after a successful solve; returns a status
        string, with "unstable" telling the caller to solve cold."""
        self.c[: self.n_struct] = np.asarray(cost, dtype=float)
        nc = self.ncol + self.n_art
        full = np.zeros(nc)
        full[:nc] = self.c[:nc]
        try:
            self._refactor(full)
        except np.linalg.LinAlgError:
            return "unstable"
        return self._phase2_resume()

    def _phase2_resume(self):
        m, n = self.m, self.ncol
        nc = n + self.n_art
        Tab, xB, basis, vstat, lo, hi = self._views()
        st, it, j_unb, dir_unb = primal_simplex(
            Tab, xB, basis, vstat, lo, hi, self._d, nc, self._max_iter()
        )
        self.iterations += it
        if st == 2:
            self._unb = (j_unb, dir_unb)
            return "unbounded"
        if st == 3:
            return "unstable"
        if self._feas_residual() > _REPORT_TOL:
            cost = np.zeros(nc)
            cost[:nc] = self.c[:nc]
            try:
                self._refactor(cost)
            except np.linalg.LinAlgError:
                return "unstable"
            st, it, _, _ = primal_simplex(
                Tab, xB, basis, vstat, lo, hi, self._d, nc, self._max_iter()
            )
            self.iterations += it
            if st != 0 or self._feas_residual() > _REPORT_TOL:
                return "unstable"
        return "optimal"

    # -- reporting --------------------------------------------------------

    def x_full(self):
        nc = self.ncol + self.n_art
        x = np.where(self.vstat[:nc] == 0, self.lo[:nc], self.hi[:nc])
        x[~np.isfinite(x)] = 0.0
        x[self.basis[: self.m]] = self.xB[: self.m]
        return x

    def x(self):
        return self.x_full()[: self.n_struct]

    def objective(self):
        x = self.x_full()
        return float(self.c[: x.shape[0]] @ x)

    def duals(self):
        """Shadow prices of the equality-form rows (length m)."""
        m = self.m
        nc = self.ncol + self.n_art
        B = self.Aext[:m, self.basis[:m]]
        cb = self.c[self.basis[:m]]
        return np.linalg.solve(B.T, cb)

    def reduced_costs(self):
        y = self.duals()
        nc = self.ncol + self.n_art
        return self.c[:nc] - self.Aext[: self.m, :nc].T @ y

    def ray(self):
        """Unbounded direction over structural columns (after 'unbounded')."""
        j, dirn = self._unb
        nc = self.ncol + self.n_art
        r = np.zeros(nc)
        r[j] = dirn
        r[self.basis[: self.m]] = -dirn * self.Tab[: self.m, j]
        return r[: self.n_struct]

    def _feas_residual(self):
        m, nc = self.m, self.ncol + self.n_art
        x = self.x_full()
        res = self.Aext[:m, :nc] @ x - self.b[:m]
        scale = np.maximum(1.0, np.abs(self.b[:m]))
        return float(np.max(np.abs(res) / scale)) if m else 0.0

    # -- edits --------------------------------------------------------------

    def set_bound(self, j, lo=None, hi=None):
        """Change bounds of structural column j; keeps the tableau in sync."""
        if j >= self.n_struct:
            raise IndexError("only structural bounds may be edited")
        new_lo = self.lo[j] if lo is None else float(lo)
        new_hi = self.hi[j] if hi is None else float(hi)
        if new_lo > new_hi:
            raise ValueError("crossed bounds")
        if new_lo == -np.inf and new_hi == np.inf:
            raise ValueError("cannot free a column (split upstream)")
        st = self.vstat[j]
        if st == 2:
            self.lo[j], self.hi[j] = new_lo, new_hi
            return
        old_val = self.lo[j] if st == 0 else self.hi[j]
        self.lo[j], self.hi[j] = new_lo, new_hi
        if st == 0 and new_lo == -np.inf:
            self.vstat[j] = 1
        elif st == 1 and new_hi == np.inf:
            self.vstat[j] = 0
        st = self.vstat[j]
        new_val = self.lo[j] if st == 0 else self.hi[j]
        delta = new_val - old_val
        if delta != 0.0:
            m = self.m
            self.xB[:m] -= delta * self.Tab[:m, j]

    def add_row(self, coefs, rel, rhs):
        """Append one row (coefs over structural columns) with a fresh slack.

        The new slack enters the basis; numerics are rebuilt by the refactor
        inside the next dual_resolve, so only the data arrays are updated.
        """
        if isinstance(rel, str):
            rel = _REL_CODE[rel]
        self._grow(1, 1)
        m, n = self.m, self.ncol
        nc = n + self.n_art
        i = m
        # artificials sit at the tail; shift them right by one column
        if self.n_art > 0:
            self.Aext[:, n + 1 : nc + 1] = self.Aext[:, n:nc].copy()
            self.Aext[:, n] = 0.0
            self.c[n + 1 : nc + 1] = self.c[n:nc].copy()
            self.lo[n + 1 : nc + 1] = self.lo[n:nc].copy()
            self.hi[n + 1 : nc + 1] = self.hi[n:nc].copy()
            self.vstat[n + 1 : nc + 1] = self.vstat[n:nc].copy()
            sel = self.basis[:m] >= n
            self.basis[:m][sel] += 1
        self.Aext[i, :] = 0.0
        cf = np.asarray(coefs, dtype=float)
        self.Aext[i, : cf.shape[0]] = cf
        self.b[i] = rhs
        self.m += 1
        j = self._append_slack(i, rel)  # j == n
        self.basis[i] = j
        self.vstat[j] = 2
        self.xB[i] = 0.0
        return i

    # -- tree search support ---------------------------------------------

    def freeze_root(self):
        nc = self.ncol + self.n_art
        self._root = (
            self.m,
            self.ncol,
            self.n_art,
            self.Aext[: self.m, :nc].copy(),
            self.b[: self.m].copy(),
            self.c[:nc].copy(),
            self.lo[:nc].copy(),
            self.hi[:nc].copy(),
        )

    def restore_root(self):
        m, ncol, n_art, Aext, b, c, lo, hi = self._root
        nc = ncol + n_art
        self.m = m
        self.ncol = ncol
        self.n_art = n_art
        self.Aext[:, :] = 0.0
        self.Aext[:m, :nc] = Aext
        self.b[:m] = b
        self.c[:nc] = c
        self.lo[:nc] = lo
        self.hi[:nc] = hi

    def basis_state(self):
        nc = self.ncol + self.n_art
        return (self.basis[: self.m].copy(), self.vstat[:nc].copy())

    def load_basis(self, state):
        basis, vstat = state
        m = self.m
        nc = self.ncol + self.n_art
        if basis.shape[0] != m or vstat.shape[0] != nc:
            raise ValueError("basis state does not match current dimensions")
        self.basis[:m] = basis
        self.vstat[:nc] = vstat


def _split_free(lp: LinearProgram):
    """Return (c, A, lo, hi, mapping) with free columns split x = xp - xm."""
    free = (lp.lo == -np.inf) & (lp.hi == np.inf)
    if not np.any(free):
        return lp.c, lp.A, lp.lo, lp.hi, None
    idx = np.nonzero(free)[0]
    n = lp.c.shape[0]
    c = np.concatenate([lp.c, -lp.c[idx]])
    A = np.hstack([lp.A, -lp.A[:, idx]])
    lo = np.concatenate([lp.lo, np.zeros(idx.size)])
    hi = np.concatenate([lp.hi, np.full(idx.size, np.inf)])
    lo[idx] = 0.0
    return c, A, lo, hi, idx


def solve_lp(lp: LinearProgram, max_seconds=None) -> LPSolution:
    """Solve an arbitrary LinearProgram, reporting primal and dual data.

    Statuses: optimal (residual <= 1e-7 per row, complementary slackness
    <= 1e-6), infeasible (with total phase-1 infeasibility), unbounded
    (with a ray certificate), unstable.
    """
    lp.validate()
    sign = 1.0 if lp.sense == "min" else -1.0
    c, A, lo, hi, split_idx = _split_free(lp)
    tab = TableauLP(sign * c, A, lp.rel, lp.b, lo, hi)
    status = tab.solve()
    n = lp.c.shape[0]

    def merge(xe):
        if split_idx is None:
            return xe[:n]
        x = xe[:n].copy()
        x[split_idx] -= xe[n:]
        return x

    if status == "infeasible":
        return LPSolution(
            "infeasible", iterations=tab.iterations, infeasibility=tab.infeasibility
        )
    if status == "unbounded":
        # the internal ray is already an improving feasible direction for the
        # original sense (internal objective = sign * original)
        ray = merge(tab.ray())
        return LPSolution("unbounded", iterations=tab.iterations, ray=ray)
    if status == "unstable":
        return LPSolution("unstable", iterations=tab.iterations)
    x = merge(tab.x())
    y = tab.duals()
    rc = lp.c - lp.A.T @ (sign * y)
    obj = float(lp.c @ x)
    return LPSolution(
        "optimal",
        objective=obj,
        x=x,
        duals=sign * y,
        reduced_costs=rc,
        iterations=tab.iterations,
    )


def check_feasibility(lp: LinearProgram) -> FeasibilityResult:
    """Phase-1 feasibility test: feasible iff the artificial objective
    reaches zero within 1e-9."""
    lp.validate()
    c, A, lo, hi, _ = _split_free(lp)
    tab = TableauLP(np.zeros_like(c), A, lp.rel, lp.b, lo, hi)
    inf_sum = tab._phase1()
    if not np.isfinite(inf_sum):
        return FeasibilityResult(False, float("inf"))
    return FeasibilityResult(inf_sum <= _FEAS_TOL, float(inf_sum))
