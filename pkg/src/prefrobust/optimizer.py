"""Maximize the worst-case choice value of a concave prospect map over a
bounded polyhedral decision set.

Each outer iteration evaluates the worst case at the current decision;
the support slope a_i of that solution gives the concave level function
sigma_i(z) = <a_i, G(z) - G(z_i)>, nonnegative wherever the objective
beats its value at z_i. The running pointwise minimum of the collected
level functions peaks at Delta over the feasible set; the incumbent is
projected onto {sigma >= lambda * Delta} until Delta <= eps.

Because every prospect component is a sum of min-of-affine terms and
every slope vector is nonnegative, both the Delta problem and the
projection region admit an exact epigraph lift: one auxiliary variable
per term, bounded above by that term's affine pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import AmbiguitySpec, Prospect, unflatten
from .lp import LinearProgram, TableauLP, _rel_array, solve_lp
from .robust_eval import evaluate_psi

__all__ = [
    "PiecewiseTerm",
    "ConcaveMap",
    "DecisionProblem",
    "LevelFunctionRec",
    "PLFMTrace",
    "level_function_at",
    "delta_max",
    "project_onto_Qi",
    "run_plfm",
    "iteration_bound",
    "estimate_constants",
]


@dataclass(frozen=True)
class PiecewiseTerm:
    """min over rows of coefs @ z + consts: one concave piecewise term."""

    coefs: np.ndarray  # (pieces, m)
    consts: np.ndarray  # (pieces,)

    def __post_init__(self):
        coefs = np.atleast_2d(np.array(self.coefs, dtype=float))
        consts = np.atleast_1d(np.array(self.consts, dtype=float))
        if coefs.shape[0] != consts.shape[0] or coefs.shape[0] < 1:
            raise ValueError("need one constant per affine piece")
        if not (np.all(np.isfinite(coefs)) and np.all(np.isfinite(consts))):
            raise ValueError("pieces must be finite")
        coefs.setflags(write=False)
        consts.setflags(write=False)
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "consts", consts)

    def value(self, z: np.ndarray) -> float:
        return float(np.min(self.coefs @ z + self.consts))


@dataclass(frozen=True)
class ConcaveMap:
    """Decision-to-prospect map; each flat component sums concave terms."""

    terms: tuple  # one tuple of PiecewiseTerm per flat prospect coordinate
    n_attributes: int
    n_scenarios: int

    def __post_init__(self):
        terms = tuple(tuple(ts) for ts in self.terms)
        if len(terms) != self.n_attributes * self.n_scenarios:
            raise ValueError("one term list per prospect coordinate required")
        widths = {t.coefs.shape[1] for ts in terms for t in ts}
        if len(widths) != 1:
            raise ValueError("all pieces must share the decision dimension")
        if any(len(ts) < 1 for ts in terms):
            raise ValueError("every component needs at least one term")
        object.__setattr__(self, "terms", terms)

    @property
    def decision_dim(self) -> int:
        return self.terms[0][0].coefs.shape[1]

    def value_flat(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        return np.array([sum(t.value(z) for t in ts) for ts in self.terms])

    def prospect(self, z) -> Prospect:
        return unflatten(self.value_flat(z), self.n_attributes, self.n_scenarios)

    @classmethod
    def affine(cls, A, b, n_attributes, n_scenarios) -> "ConcaveMap":
        """G(z) = A z + b as a one-piece map."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        terms = tuple(
            (PiecewiseTerm(A[i : i + 1, :], b[i : i + 1]),)
            for i in range(A.shape[0])
        )
        return cls(terms, n_attributes, n_scenarios)


@dataclass(frozen=True)
class DecisionProblem:
    """Bounded polyhedral decision set, prospect map, and ambiguity data.

    rows follow the (coefficients, relation, rhs) convention of the LP
    layer. Construction solves one LP per coordinate bound to certify
    the feasible set is nonempty and bounded; the resulting box feeds
    the epigraph lifts.
    """

    rows: tuple
    lo: np.ndarray
    hi: np.ndarray
    gmap: ConcaveMap
    ambiguity: AmbiguitySpec

    def __post_init__(self):
        m = self.gmap.decision_dim
        lo = np.full(m, -np.inf) if self.lo is None else np.asarray(self.lo, float)
        hi = np.full(m, np.inf) if self.hi is None else np.asarray(self.hi, float)
        if lo.shape != (m,) or hi.shape != (m,):
            raise ValueError("bound length does not match the decision dim")
        rows = tuple(
            (np.asarray(c, dtype=float).ravel(), r, float(v)) for c, r, v in self.rows
        )
        for c, _, _ in rows:
            if c.shape != (m,):
                raise ValueError("row coefficient length does not match")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        zmin = np.empty(m)
        zmax = np.empty(m)
        for j in range(m):
            e = np.zeros(m)
            e[j] = 1.0
            for sense, store in (("min", zmin), ("max", zmax)):
                sol = solve_lp(
                    LinearProgram.build(e, list(rows), lo=lo, hi=hi, sense=sense)
                )
                if sol.status == "infeasible":
                    raise ValueError("feasible set is empty")
                if sol.status == "unbounded":
                    raise ValueError("feasible set is unbounded")
                if sol.status != "optimal":
                    raise RuntimeError(f"bounding LP {sol.status}")
                store[j] = sol.objective
        zmin.setflags(write=False)
        zmax.setflags(write=False)
        object.__setattr__(self, "zbox_lo", zmin)
        object.__setattr__(self, "zbox_hi", zmax)

    @property
    def decision_dim(self) -> int:
        return self.gmap.decision_dim

    def diameter(self) -> float:
        """Diagonal of the coordinate bounding box (upper bound)."""
        return float(np.linalg.norm(self.zbox_hi - self.zbox_lo))


@dataclass(frozen=True)
class LevelFunctionRec:
    """Concave level function <a, G(z) - G(anchor)> at one decision."""

    anchor: np.ndarray
    a: np.ndarray
    value_at_anchor: float
    g_at_anchor: np.ndarray

    def sigma(self, z, gmap: ConcaveMap) -> float:
        return float(self.a @ (gmap.value_flat(z) - self.g_at_anchor))


@dataclass
class IterationRecord:
    index: int
    z: np.ndarray
    psi: float
    delta: float
    projection_residual: float


@dataclass
class PLFMTrace:
    records: list = field(default_factory=list)
    incumbent_z: Optional[np.ndarray] = None
    incumbent_psi: float = -math.inf
    termination: str = ""

    def to_csv(self) -> str:
        lines = ["iteration,psi,delta,projection_residual"]
        for r in self.records:
            lines.append(
                f"{r.index},{r.psi:.12g},{r.delta:.12g},{r.projection_residual:.6g}"
            )
        return "\n".join(lines) + "\n"


def level_function_at(z, dp: DecisionProblem, **solver_kwargs) -> LevelFunctionRec:
    """Evaluate the worst case at G(z); the optimal support slope is the
    level-function gradient in prospect space."""
    z = np.asarray(z, dtype=float).ravel()
    g = dp.gmap.value_flat(z)
    res = evaluate_psi(dp.ambiguity, dp.gmap.prospect(z), **solver_kwargs)
    return LevelFunctionRec(z, res.support.a, res.psi_value, g)


def _term_boxes(dp: DecisionProblem):
    """Finite [lo, hi] per lifted term variable, from box arithmetic.

    Each affine piece's range over the coordinate box contains its range
    over the feasible set, and the term (a min of pieces) lies between
    the smallest piece minimum and the smallest piece maximum. Widened
    by 1 so the box never binds at a tight optimum.
    """
    zl, zh = dp.zbox_lo, dp.zbox_hi
    tlo, thi = [], []
    for ts in dp.gmap.terms:
        for t in ts:
            lo_vals = (t.coefs * np.where(t.coefs > 0, zl, zh)).sum(axis=1) + t.consts
            hi_vals = (t.coefs * np.where(t.coefs > 0, zh, zl)).sum(axis=1) + t.consts
            tlo.append(float(lo_vals.min()) - 1.0)
            thi.append(float(hi_vals.min()) + 1.0)
    return np.array(tlo), np.array(thi)


def _lift_rows(dp: DecisionProblem):
    """Rows of {(z, t) : z in Z, t_ct <= every piece of term ct}."""
    m = dp.decision_dim
    nt = sum(len(ts) for ts in dp.gmap.terms)
    rows = []
    for c, r, v in dp.rows:
        rows.append((np.concatenate([c, np.zeros(nt)]), r, v))
    ti = 0
    for ts in dp.gmap.terms:
        for t in ts:
            for p in range(t.coefs.shape[0]):
                coefs = np.zeros(m + nt)
                coefs[:m] = -t.coefs[p]
                coefs[m + ti] = 1.0
                rows.append((coefs, "<=", float(t.consts[p])))
            ti += 1
    return rows, nt


def _term_slopes(dp: DecisionProblem, a: np.ndarray) -> np.ndarray:
    """Expand a per-component slope vector to per-term coefficients."""
    out = np.empty(sum(len(ts) for ts in dp.gmap.terms))
    ti = 0
    for ci, ts in enumerate(dp.gmap.terms):
        for _ in ts:
            out[ti] = a[ci]
            ti += 1
    return out


def delta_max(lfs: Sequence[LevelFunctionRec], dp: DecisionProblem):
    """max over the feasible set of the pointwise-min level function.

    Exact epigraph LP: maximize mv subject to mv <= <a_j, t> - <a_j,
    G(z_j)> and the lift rows; nonnegative slopes make raising t to G(z)
    always admissible, so the lift loses nothing.
    """
    if not lfs:
        raise ValueError("need at least one level function")
    m = dp.decision_dim
    rows, nt = _lift_rows(dp)
    rows = [(np.concatenate([c, [0.0]]), r, v) for c, r, v in rows]
    for rec in lfs:
        coefs = np.zeros(m + nt + 1)
        coefs[m : m + nt] = -_term_slopes(dp, rec.a)
        coefs[-1] = 1.0
        rows.append((coefs, "<=", -float(rec.a @ rec.g_at_anchor)))
    tlo, thi = _term_boxes(dp)
    c = np.zeros(m + nt + 1)
    c[-1] = 1.0
    lp = LinearProgram.build(
        c,
        rows,
        lo=np.concatenate([dp.zbox_lo, tlo, [-np.inf]]),
        hi=np.concatenate([dp.zbox_hi, thi, [np.inf]]),
        sense="max",
    )
    sol = solve_lp(lp)
    if sol.status == "unbounded":
        raise ValueError("feasible set is unbounded")
    if sol.status != "optimal":
        raise RuntimeError(f"level-gap LP {sol.status}")
    return float(sol.objective), sol.x[:m].copy()


def _simplex_qp(P: np.ndarray, r: np.ndarray, w0: np.ndarray) -> np.ndarray:
    """min ||P^T w - r||^2 over the probability simplex, by active sets.

    P is (K, d); w0 a feasible warm start. Small K only.
    """
    K = P.shape[0]
    w = np.asarray(w0, dtype=float).copy()
    w = np.clip(w, 0.0, None)
    s = w.sum()
    w = np.full(K, 1.0 / K) if s <= 0 else w / s
    support = w > 1e-12
    gram = P @ P.T
    pr = P @ r
    for _ in range(4 * K + 16):
        idx = np.flatnonzero(support)
        ns = idx.size
        kkt = np.zeros((ns + 1, ns + 1))
        kkt[:ns, :ns] = gram[np.ix_(idx, idx)] + 1e-12 * np.eye(ns)
        kkt[:ns, ns] = 1.0
        kkt[ns, :ns] = 1.0
        rhs = np.concatenate([pr[idx], [1.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        w_new = sol[:ns]
        if np.all(w_new >= -1e-12):
            w[:] = 0.0
            w[idx] = np.clip(w_new, 0.0, None)
            w /= w.sum()
            # optimality: no outside vertex undercuts the multiplier
            grad = gram @ w - pr
            nu = float(np.min(grad[idx]))
            outside = ~support
            if not np.any(outside):
                return w
            j = int(np.argmin(np.where(outside, grad, np.inf)))
            if grad[j] >= nu - 1e-12:
                return w
            support[j] = True
            continue
        # step toward the KKT point until the first weight hits zero
        cur = w[idx]
        d = w_new - cur
        neg = d < -1e-16
        alpha = min(1.0, float(np.min(-cur[neg] / d[neg]))) if np.any(neg) else 1.0
        stepped = cur + alpha * d
        w[:] = 0.0
        w[idx] = np.clip(stepped, 0.0, None)
        support = w > 1e-12
        if not np.any(support):
            support[idx[int(np.argmax(stepped))]] = True
    return w


def project_onto_Qi(
    z_ref,
    lfs: Sequence[LevelFunctionRec],
    threshold: float,
    dp: DecisionProblem,
    *,
    gap_tol: Optional[float] = None,
    max_iter: int = 20_000,
):
    """Euclidean projection of z_ref onto {z in Z : sigma_j(z) >= threshold}.

    Runs away-step Frank-Wolfe on the lifted polytope (every iterate is
    a convex combination of feasible vertices, so it satisfies the
    threshold exactly), with a corrective projection onto the active
    vertex hull every 32 steps and at termination. Stops when the FW
    gap falls below 1e-8 * (1 + ||z_ref||^2) unless overridden.
    Returns (z, final_gap).
    """
    z_ref = np.asarray(z_ref, dtype=float).ravel()
    m = dp.decision_dim
    if gap_tol is None:
        gap_tol = 1e-8 * (1.0 + float(z_ref @ z_ref))
    rows, nt = _lift_rows(dp)
    for rec in lfs:
        coefs = np.zeros(m + nt)
        coefs[m:] = _term_slopes(dp, rec.a)
        rows.append((coefs, ">=", float(threshold + rec.a @ rec.g_at_anchor)))
    tlo, thi = _term_boxes(dp)
    lo = np.concatenate([dp.zbox_lo, tlo])
    hi = np.concatenate([dp.zbox_hi, thi])
    A = np.array([c for c, _, _ in rows])
    rel = [r for _, r, _ in rows]
    b = np.array([v for _, _, v in rows])
    tab = TableauLP(np.zeros(m + nt), A, _rel_array(rel), b, lo, hi)
    if tab.solve() != "optimal":
        raise RuntimeError(
            "projection region is empty; the level-gap value is inconsistent"
        )
    v0 = tab.x().copy()

    verts = [v0]
    weights = [1.0]
    keys = {v0.tobytes(): 0}
    x = v0.copy()

    def oracle(grad):
        st = tab.resolve_with_cost(grad)
        if st == "unstable":
            st = tab.solve()
        if st != "optimal":
            raise RuntimeError(f"projection oracle {st}")
        return tab.x().copy()

    def corrective():
        nonlocal verts, weights, x
        P = np.array([v[:m] for v in verts])
        w = _simplex_qp(P, z_ref, np.array(weights))
        keep = w > 1e-14
        verts = [v for v, k in zip(verts, keep) if k]
        weights = list(w[keep] / w[keep].sum())
        keys.clear()
        keys.update({v.tobytes(): i for i, v in enumerate(verts)})
        x = np.einsum("i,ij->j", np.array(weights), np.array(verts))

    gap = math.inf
    for it in range(max_iter):
        grad = np.zeros(m + nt)
        grad[:m] = 2.0 * (x[:m] - z_ref)
        s = oracle(grad)
        gap = float(grad @ (x - s))
        if gap <= gap_tol:
            break
        # away vertex must carry weight, or its step size is zero
        active = [i for i, w in enumerate(weights) if w > 1e-14]
        k_away = max(active, key=lambda i: float(grad @ verts[i]))
        away_gain = float(grad @ (verts[k_away] - x))
        if gap >= away_gain or len(active) == 1:
            d = s - x
            gamma_max = 1.0
            fw = True
        else:
            d = x - verts[k_away]
            alpha = weights[k_away]
            gamma_max = alpha / (1.0 - alpha) if alpha < 1.0 else 1.0
            fw = False
        dz = d[:m]
        denom = float(dz @ dz)
        if denom <= 1e-18:
            break
        gamma = min(gamma_max, max(0.0, -float(grad[:m] @ dz) / (2.0 * denom)))
        if gamma <= 0.0:
            break
        if fw:
            weights = [w * (1.0 - gamma) for w in weights]
            key = s.tobytes()
            if key in keys:
                weights[keys[key]] += gamma
            else:
                keys[key] = len(verts)
                verts.append(s)
                weights.append(gamma)
        else:
            weights = [w * (1.0 + gamma) for w in weights]
            weights[k_away] -= gamma
        x = x + gamma * d
        if (it + 1) % 32 == 0:
            corrective()
    corrective()
    z = x[:m].copy()
    for rec in lfs:
        if rec.sigma(z, dp.gmap) < threshold - 1e-7:
            raise RuntimeError("projected point violates the threshold")
    return z, gap


def run_plfm(
    dp: DecisionProblem,
    lam: float = 0.8,
    eps: float = 1e-4,
    max_iter: int = 200,
    z0=None,
    **solver_kwargs,
) -> PLFMTrace:
    """Projected level function method.

    Per iteration: evaluate the worst case at the current decision,
    update the incumbent (running best), compute the level gap Delta
    over the collected level functions, stop when Delta <= eps, else
    project the incumbent onto the lambda-level region. The printed
    method leaves the exact sequencing of incumbent update and
    projection ambiguous; this ordering is one consistent reading.
    """
    if not (0.0 < lam < 1.0):
        raise ValueError("lambda must be in (0, 1)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if z0 is None:
        sol = solve_lp(
            LinearProgram.build(
                np.zeros(dp.decision_dim), list(dp.rows), lo=dp.lo, hi=dp.hi
            )
        )
        if sol.status != "optimal":
            raise RuntimeError(f"start-point LP {sol.status}")
        z = sol.x.copy()
    else:
        z = np.asarray(z0, dtype=float).ravel()

    trace = PLFMTrace()
    lfs = []
    for i in range(max_iter):
        rec = level_function_at(z, dp, **solver_kwargs)
        lfs.append(rec)
        if rec.value_at_anchor > trace.incumbent_psi:
            trace.incumbent_psi = rec.value_at_anchor
            trace.incumbent_z = rec.anchor.copy()
        delta, _ = delta_max(lfs, dp)
        if delta <= eps:
            trace.records.append(
                IterationRecord(i, z.copy(), rec.value_at_anchor, delta, math.nan)
            )
            trace.termination = "converged"
            return trace
        z_next, resid = project_onto_Qi(trace.incumbent_z, lfs, lam * delta, dp)
        trace.records.append(
            IterationRecord(i, z.copy(), rec.value_at_anchor, delta, resid)
        )
        z = z_next
    trace.termination = "iteration cap"
    return trace


def iteration_bound(K: float, D: float, eps: float, lam: float) -> int:
    """Iteration count after which the level gap is certified <= eps."""
    if K <= 0 or D <= 0 or eps <= 0:
        raise ValueError("K, D and eps must be positive")
    if not (0.0 < lam < 1.0):
        raise ValueError("lambda must be in (0, 1)")
    return int(math.ceil(K * K * D * D / (eps * eps * lam * lam * (1.0 - lam * lam))))


def estimate_constants(dp: DecisionProblem):
    """(K, D): a uniform Lipschitz bound for level functions, and the
    feasible-set diameter bound.

    Every slope vector lies in [0, L]^dim, and each component of the
    prospect map is Lipschitz at most the sum over terms of the largest
    piece gradient norm, so K = L * sum of the per-component bounds.
    """
    L = dp.ambiguity.lipschitz_L
    comp = 0.0
    for ts in dp.gmap.terms:
        comp += sum(float(np.linalg.norm(t.coefs, axis=1).max()) for t in ts)
    return L * comp, dp.diameter()
