"""Worst-case evaluation of a query prospect against elicited comparisons.

The value psi(X) is the minimum of rho(X) - rho(Y) over all nondecreasing,
quasi-concave, L-Lipschitz functions rho with rho(0) = 0 that rank every
elicited pair W_i over Y_i. On the finite point set Theta this is a mixed
0/1 program: continuous values v_theta, subgradients s_theta, and a hockey
stick (a, b, c) supporting the query, with two disjunction families

    x(i,j):  <s_i, theta_j - theta_i> + v_i >= v_j   OR   v_i >= v_j
    y(i):    <a, theta_i> + b >= v_i                 OR   c >= v_i

`build_robust_milp` materializes the classic big-M form of that program
exactly as written (for export and cross-solver checks). `evaluate_psi`
solves it with a logic-based branch-and-bound instead: node LPs carry no
big-M rows, branching adds one enforced side of one violated disjunction,
and best-bound selection with warm-started dual simplex re-solves keeps
the tree small. Node relaxations may include provably valid strengthening
rows (see `_node_arrays`); these never change the optimum and can be
switched off.

`enumerate_oracle` is the ground truth: it enumerates every binary
assignment and solves each induced LP.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ._kernel import full_solve, njit
from .core import (
    AmbiguitySpec,
    InconsistentDataError,
    Prospect,
    ThetaSet,
    build_theta,
    flatten,
)
from .envelope import HockeyStick
from .lp import LinearProgram, TableauLP, solve_lp

__all__ = [
    "RobustInstance",
    "MILPModel",
    "RobustEvalResult",
    "choose_bigM",
    "build_robust_milp",
    "instance_from_spec",
    "evaluate_psi",
    "enumerate_oracle",
    "export_lp_file",
]

_SAT_TOL = 1e-7


@dataclass(frozen=True)
class RobustInstance:
    """One evaluation problem over an explicit point set."""

    theta: ThetaSet
    query: np.ndarray
    lipschitz_L: float
    bigM: float
    benchmark_index: int | None = None

    def __post_init__(self):
        q = np.array(self.query, dtype=float)
        if q.shape != (self.theta.dim,):
            raise ValueError("query dimension does not match the point set")
        if not np.all(np.isfinite(q)):
            raise ValueError("query must be finite")
        if self.lipschitz_L <= 0 or self.bigM <= 0:
            raise ValueError("lipschitz_L and bigM must be positive")
        q.setflags(write=False)
        object.__setattr__(self, "query", q)


@dataclass
class MILPModel:
    """Big-M formulation plus bookkeeping for export and cross-checks."""

    lp: LinearProgram
    binary_variable_indices: list[int]
    groups: dict
    row_names: list[str]
    bigM: float


@dataclass
class RobustEvalResult:
    psi_value: float
    support: HockeyStick
    values_v: np.ndarray
    subgradients_s: np.ndarray
    node_count: int
    gap: float


def _pos_l1(vec: np.ndarray) -> float:
    return float(np.clip(vec, 0.0, None).sum())


def _neg_l1(vec: np.ndarray) -> float:
    return float(np.clip(-vec, 0.0, None).sum())


def choose_bigM(theta: ThetaSet, L: float, query=None) -> float:
    """2 L max||p||_1 + L max||p - p'||_1 + 1 over the support points,
    with the query folded into the point set when given.

    Any feasible value satisfies |v_theta| <= L ||theta||_1 (Lipschitz from
    the origin) and any subgradient term |<s, theta'-theta>| is at most
    L ||theta'-theta||_1, so relaxing a disjunction side by this M never
    cuts the optimum.  The constant branch of an optimal support function
    may need to sit as low as the worst-case value at the query itself,
    which is bounded by the query's l1 norm; a query outside the range of
    the support points therefore has to enter the bound, or the relaxed
    c-disjunction clips the optimum.
    """
    pts = theta.points
    if query is not None:
        q = np.asarray(query, dtype=float).reshape(1, -1)
        pts = np.vstack([pts, q])
    mx = float(np.abs(pts).sum(axis=1).max())
    pair = float(np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=2).max())
    return 2.0 * L * mx + L * pair + 1.0


def _ordered_pairs(T: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(T) for j in range(T) if i != j]


def _query_vector(spec: AmbiguitySpec, query) -> np.ndarray:
    if isinstance(query, Prospect):
        if query.values.shape != (spec.n, spec.sample_space.k):
            raise ValueError("query prospect shape does not match the data")
        return flatten(query)
    q = np.asarray(query, dtype=float).ravel()
    if q.size != spec.dim:
        raise ValueError("query vector length does not match the data")
    return q


def instance_from_spec(spec: AmbiguitySpec, query, bigM=None) -> RobustInstance:
    theta = build_theta(spec)
    L = float(spec.lipschitz_L)
    X = _query_vector(spec, query)
    M = float(bigM) if bigM is not None else choose_bigM(theta, L, X)
    return RobustInstance(theta, X, L, M, theta.benchmark_index)


# -- big-M model ----------------------------------------------------------


def build_robust_milp(inst: RobustInstance) -> MILPModel:
    """The big-M mixed 0/1 program, rows in a fixed documented order.

    Columns: a (d), b, c, t, v (T), s (T*d, point-major), x (ordered point
    pairs, i-major skipping i == j), y (T). Rows: the two epigraph rows,
    then per ordered pair its relaxed subgradient row and relaxed
    dominance row, the normalization v_zero = 0, one row per elicited
    pair, then per point the two relaxed support rows. Binaries are the
    x and y columns; b, c, t, v stay free.
    """
    theta = inst.theta
    pts = theta.points
    T, d = pts.shape
    X = inst.query
    L = inst.lipschitz_L
    M = inst.bigM
    opairs = _ordered_pairs(T)
    nx = len(opairs)
    c_a, c_b, c_c, c_t = 0, d, d + 1, d + 2
    c_v = d + 3
    c_s = c_v + T
    c_x = c_s + T * d
    c_y = c_x + nx
    ncol = c_y + T

    names = [f"a_{k}" for k in range(d)] + ["b", "c", "t"]
    names += [f"v_{i}" for i in range(T)]
    names += [f"s_{i}_{k}" for i in range(T) for k in range(d)]
    names += [f"x_{i}_{j}" for i, j in opairs]
    names += [f"y_{i}" for i in range(T)]

    rows = []
    row_names = []

    r = np.zeros(ncol)
    r[c_a : c_a + d] = X
    r[c_b] = 1.0
    r[c_t] = -1.0
    rows.append((r, "<=", 0.0))
    row_names.append("epi_affine")

    r = np.zeros(ncol)
    r[c_c] = 1.0
    r[c_t] = -1.0
    rows.append((r, "<=", 0.0))
    row_names.append("epi_const")

    for pos, (i, j) in enumerate(opairs):
        diff = pts[j] - pts[i]
        r = np.zeros(ncol)
        r[c_s + i * d : c_s + (i + 1) * d] = -diff
        r[c_v + i] = -1.0
        r[c_v + j] = 1.0
        r[c_x + pos] = -M
        rows.append((r, "<=", 0.0))
        row_names.append(f"grad_{i}_{j}")
        r = np.zeros(ncol)
        r[c_v + i] = -1.0
        r[c_v + j] = 1.0
        r[c_x + pos] = M
        rows.append((r, "<=", M))
        row_names.append(f"dom_{i}_{j}")

    r = np.zeros(ncol)
    r[c_v + theta.zero_index] = 1.0
    rows.append((r, "==", 0.0))
    row_names.append("norm_zero")

    n_pairs = sum(1 for role in theta.role_index if role.startswith("W("))
    for p in range(1, n_pairs + 1):
        wi = theta.role_index[f"W({p})"]
        yi = theta.role_index[f"Y({p})"]
        r = np.zeros(ncol)
        r[c_v + yi] += 1.0
        r[c_v + wi] -= 1.0
        rows.append((r, "<=", 0.0))
        row_names.append(f"elicit_{p}")

    for i in range(T):
        r = np.zeros(ncol)
        r[c_v + i] = 1.0
        r[c_a : c_a + d] = -pts[i]
        r[c_b] = -1.0
        r[c_y + i] = -M
        rows.append((r, "<=", 0.0))
        row_names.append(f"sup_affine_{i}")
        r = np.zeros(ncol)
        r[c_v + i] = 1.0
        r[c_c] = -1.0
        r[c_y + i] = M
        rows.append((r, "<=", M))
        row_names.append(f"sup_const_{i}")

    obj = np.zeros(ncol)
    obj[c_t] = 1.0
    if inst.benchmark_index is not None:
        obj[c_v + inst.benchmark_index] -= 1.0

    lo = np.full(ncol, -np.inf)
    hi = np.full(ncol, np.inf)
    lo[c_a : c_a + d] = 0.0
    hi[c_a : c_a + d] = L
    lo[c_s : c_s + T * d] = 0.0
    hi[c_s : c_s + T * d] = L
    lo[c_x:ncol] = 0.0
    hi[c_x:ncol] = 1.0

    lp = LinearProgram.build(obj, rows, lo=lo, hi=hi, sense="min", names=names)
    groups = {
        "a": list(range(c_a, c_a + d)),
        "b": c_b,
        "c": c_c,
        "t": c_t,
        "v": list(range(c_v, c_v + T)),
        "s": [list(range(c_s + i * d, c_s + (i + 1) * d)) for i in range(T)],
        "x": {pair: c_x + pos for pos, pair in enumerate(opairs)},
        "y": list(range(c_y, c_y + T)),
    }
    binaries = list(range(c_x, ncol))
    return MILPModel(lp, binaries, groups, row_names, M)


# -- logic-based branch-and-bound ----------------------------------------


def _node_arrays(theta, X, L, M, bench, tighten):
    """Root relaxation arrays: no big-M rows, all columns boxed.

    Boxes: |v_theta| is capped by the one-sided Lipschitz bounds implied
    by either side of the disjunctions against the origin, so the caps
    hold at every feasible assignment. b and c keep at least one optimal
    support within [-M, M] (lower c to the largest value it covers, then
    lower b likewise). Every optimal t lies in the stated range because
    t >= v_0 - L||(0 - X)+||_1 holds under either y(0) branch and the
    all-constant support bounds t from above.

    With tighten=True two valid row families are added: pairwise caps
    v_j - v_i <= L||(theta_j - theta_i)+||_1 (implied by either x(i,j)
    side) and query links t >= v_i - L||(theta_i - X)+||_1 (implied by
    either y(i) side plus the epigraph rows). tighten="links" keeps the
    query links and restricts the pairwise caps to pairs touching the
    benchmark point, trading bound quality for O(T) rows so large point
    sets stay solvable in dense arithmetic.
    """
    pts = theta.points
    T, d = pts.shape
    ncol = d + 3 + T + T * d
    c_b, c_c, c_t, c_v, c_s = d, d + 1, d + 2, d + 3, d + 3 + T

    obj = np.zeros(ncol)
    obj[c_t] = 1.0
    if bench is not None:
        obj[c_v + bench] -= 1.0

    lo = np.zeros(ncol)
    hi = np.zeros(ncol)
    lo[:d] = 0.0
    hi[:d] = L
    lo[c_b] = lo[c_c] = -M
    hi[c_b] = hi[c_c] = M
    lo[c_t] = -L * _neg_l1(X)
    hi[c_t] = M + L * float(np.abs(X).sum()) + 1.0
    for i in range(T):
        lo[c_v + i] = -L * _neg_l1(pts[i])
        hi[c_v + i] = L * _pos_l1(pts[i])
    lo[c_s:] = 0.0
    hi[c_s:] = L

    rows = []
    r = np.zeros(ncol)
    r[:d] = X
    r[c_b] = 1.0
    r[c_t] = -1.0
    rows.append((r, -1, 0.0))
    r = np.zeros(ncol)
    r[c_c] = 1.0
    r[c_t] = -1.0
    rows.append((r, -1, 0.0))

    n_pairs = sum(1 for role in theta.role_index if role.startswith("W("))
    for p in range(1, n_pairs + 1):
        wi = theta.role_index[f"W({p})"]
        yi = theta.role_index[f"Y({p})"]
        if wi == yi:
            continue
        r = np.zeros(ncol)
        r[c_v + yi] = 1.0
        r[c_v + wi] = -1.0
        rows.append((r, -1, 0.0))

    if tighten:
        if tighten == "links":
            # rows against the zero point are already implied by the v boxes
            anchors = set() if bench is None else {bench}
            pair_iter = (
                (i, j)
                for i in range(T)
                for j in (anchors if i not in anchors else range(T))
                if i != j
            )
        else:
            pair_iter = ((i, j) for i in range(T) for j in range(T) if i != j)
        for i, j in pair_iter:
            r = np.zeros(ncol)
            r[c_v + j] = 1.0
            r[c_v + i] = -1.0
            rows.append((r, -1, L * _pos_l1(pts[j] - pts[i])))
        for i in range(T):
            r = np.zeros(ncol)
            r[c_v + i] = 1.0
            r[c_t] = -1.0
            rows.append((r, -1, L * _pos_l1(pts[i] - X)))

    A = np.vstack([row[0] for row in rows])
    rel = np.array([row[1] for row in rows], dtype=np.int8)
    rhs = np.array([row[2] for row in rows])
    return obj, A, rel, rhs, lo, hi


def _disjunction_templates(theta, X, L):
    """Per disjunction, the two enforceable sides as (coefs, rel, rhs).

    Ids: 0..nx-1 are the x(i, j) disjunctions in ordered-pair order,
    then one y(i) per point.
    """
    pts = theta.points
    T, d = pts.shape
    ncol = d + 3 + T + T * d
    c_b, c_c, c_v, c_s = d, d + 1, d + 3, d + 3 + T
    templates = []
    for i, j in _ordered_pairs(T):
        diff = pts[j] - pts[i]
        r0 = np.zeros(ncol)
        r0[c_s + i * d : c_s + (i + 1) * d] = diff
        r0[c_v + i] = 1.0
        r0[c_v + j] = -1.0
        r1 = np.zeros(ncol)
        r1[c_v + i] = 1.0
        r1[c_v + j] = -1.0
        templates.append(((r0, 1, 0.0), (r1, 1, 0.0)))
    for i in range(T):
        r0 = np.zeros(ncol)
        r0[:d] = pts[i]
        r0[c_b] = 1.0
        r0[c_v + i] = -1.0
        r1 = np.zeros(ncol)
        r1[c_c] = 1.0
        r1[c_v + i] = -1.0
        templates.append(((r0, 1, 0.0), (r1, 1, 0.0)))
    return templates


def _split_solution(x, T, d):
    c_v = d + 3
    c_s = c_v + T
    a = x[:d]
    b = float(x[d])
    cc = float(x[d + 1])
    t = float(x[d + 2])
    v = x[c_v : c_v + T]
    s = x[c_s : c_s + T * d].reshape(T, d)
    return a, b, cc, t, v, s


def _repair_subgradients(pts, v, s, L, forced0, tol):
    """Try to re-fit each point's subgradient to the current values.

    Point i needs <s_i, theta_j - theta_i> >= v_j - v_i for every j whose
    value is higher (others fall to the dominance side) and for every j
    already forced to the subgradient side on this path. Each point is an
    independent small feasibility LP; returns None when one fails.
    """
    T, d = pts.shape
    out = s.copy()
    for i in range(T):
        need = [
            j
            for j in range(T)
            if j != i and (v[j] - v[i] > tol or (i, j) in forced0)
        ]
        if not need:
            continue
        current_ok = all(
            s[i] @ (pts[j] - pts[i]) >= v[j] - v[i] - tol for j in need
        )
        if current_ok:
            continue
        rows = [(pts[j] - pts[i], ">=", v[j] - v[i]) for j in need]
        lp = LinearProgram.build(
            np.zeros(d), rows, lo=np.zeros(d), hi=np.full(d, L)
        )
        sol = solve_lp(lp)
        if sol.status != "optimal":
            return None
        out[i] = sol.x
    return out


def evaluate_psi(
    spec: AmbiguitySpec,
    query,
    *,
    gap_tol: float = 1e-6,
    tighten: bool = True,
    bigM=None,
    max_nodes: int = 200_000,
) -> RobustEvalResult:
    """Exact worst-case value of the query, certified to an absolute gap.

    Raises InconsistentDataError when no admissible function rationalizes
    the comparisons (unreachable for well-formed data: the zero function
    always does, but kept as a safety net), RuntimeError on numerical
    failure or node-limit overrun.
    """
    theta = build_theta(spec)
    X = _query_vector(spec, query)
    L = float(spec.lipschitz_L)
    M = float(bigM) if bigM is not None else choose_bigM(theta, L, X)
    pts = theta.points
    T, d = pts.shape
    bench = theta.benchmark_index

    obj, A, rel, rhs, lo, hi = _node_arrays(theta, X, L, M, bench, tighten)
    tab = TableauLP(obj, A, rel, rhs, lo, hi)
    status = tab.solve()
    if status == "infeasible":
        raise InconsistentDataError(
            "no admissible function rationalizes the comparison data"
        )
    if status != "optimal":
        raise RuntimeError(f"root relaxation {status}")
    tab.freeze_root()

    templates = _disjunction_templates(theta, X, L)
    opairs = _ordered_pairs(T)
    nx = len(opairs)
    n_disj = nx + T

    best = None  # (objective, a, b, c, t, v, s)
    node_count = 0
    heap = []
    seq = 0

    def rebuild(edits, parent_basis, relax=0.0):
        tab.restore_root()
        for pos, (did, side) in enumerate(edits):
            coefs, rl, rh = templates[did][side]
            # relax > 0 loosens each appended row a hair; bounds from the
            # loosened node are still valid and it breaks pivot cycling
            rh = rh - relax * (1 + pos) if rl == 1 else rh + relax * (1 + pos)
            if pos == len(edits) - 1:
                warm = parent_basis is not None
                if warm:
                    try:
                        tab.load_basis(parent_basis)
                    except ValueError:
                        # parent solved cold with a different artificial count
                        warm = False
            tab.add_row(coefs, rl, rh)
        st = tab.dual_resolve() if warm else tab.solve()
        if st == "unstable":
            st = tab.solve()
        return st

    def solve_node(edits, parent_basis):
        st = rebuild(edits, parent_basis)
        for relax in (1e-9, 1e-6):
            if st != "unstable":
                break
            st = rebuild(edits, None, relax=relax)
        return st

    def process(obj_val, edits):
        """Returns True when the node produced an incumbent, else pushes
        two children onto the heap."""
        nonlocal best, seq
        a, b, cc, t, v, s = _split_solution(tab.x(), T, d)
        decided = {did for did, _ in edits}
        forced0 = {opairs[did] for did, side in edits if side == 0 and did < nx}
        viol_best = 0.0
        viol_id = -1
        for did in range(n_disj):
            if did in decided:
                continue
            if did < nx:
                i, j = opairs[did]
                v0 = (v[j] - v[i]) - s[i] @ (pts[j] - pts[i])
                v1 = v[j] - v[i]
            else:
                i = did - nx
                v0 = v[i] - (a @ pts[i] + b)
                v1 = v[i] - cc
            m = min(v0, v1)
            if m > viol_best:
                viol_best = m
                viol_id = did
        if viol_best <= _SAT_TOL:
            if best is None or obj_val < best[0]:
                best = (obj_val, a.copy(), b, cc, t, v.copy(), s.copy())
            return True
        # support check: can every point be covered by the stick as-is?
        sup_ok = all(
            max(float(a @ pts[i]) + b, cc) >= v[i] - _SAT_TOL for i in range(T)
        )
        if sup_ok:
            s2 = _repair_subgradients(pts, v, s, L, forced0, _SAT_TOL)
            if s2 is not None:
                if best is None or obj_val < best[0]:
                    best = (obj_val, a.copy(), b, cc, t, v.copy(), s2)
                return True
        state = tab.basis_state()
        for side in (0, 1):
            heapq.heappush(
                heap, (obj_val, seq, edits + ((viol_id, side),), state)
            )
            seq += 1
        return False

    process(tab.objective(), ())
    while heap:
        bound = heap[0][0]
        if best is not None and bound >= best[0] - gap_tol:
            break
        _, _, edits, pbasis = heapq.heappop(heap)
        node_count += 1
        if node_count > max_nodes:
            raise RuntimeError("branch-and-bound node limit exceeded")
        st = solve_node(edits, pbasis)
        if st == "infeasible":
            continue
        if st != "optimal":
            raise RuntimeError(f"node relaxation {st}")
        obj_val = tab.objective()
        if best is not None and obj_val >= best[0] - gap_tol:
            continue
        process(obj_val, edits)

    if best is None:
        raise InconsistentDataError(
            "no admissible function rationalizes the comparison data"
        )
    gap = 0.0
    if heap:
        gap = max(0.0, best[0] - heap[0][0])

    obj_val, a, b, cc, t, v, s = best
    a = np.clip(a, 0.0, L)
    s = np.clip(s, 0.0, L)
    for i in range(T):
        if max(float(a @ pts[i]) + b, cc) < v[i] - 1e-6:
            raise RuntimeError("support invariant violated at reporting")
    return RobustEvalResult(
        psi_value=float(obj_val),
        support=HockeyStick(a, b, cc),
        values_v=v,
        subgradients_s=s,
        node_count=node_count + 1,
        gap=float(gap),
    )


# -- exhaustive oracle ----------------------------------------------------


@njit(cache=True)
def _enum_kernel(pts, X, L, pair_w, pair_y, bench, v_lo, v_hi, box_bc,
                 t_lo, t_hi, max_iter):
    T, d = pts.shape
    nx = T * (T - 1)
    ny = T
    ncol = d + 3 + T + T * d
    P = pair_w.shape[0]
    m = 2 + P + nx + ny
    A = np.zeros((m, ncol))
    rel = np.full(m, -1, dtype=np.int8)
    rhs = np.zeros(m)
    cvec = np.zeros(ncol)
    lo = np.zeros(ncol)
    hi = np.zeros(ncol)
    for k in range(d):
        hi[k] = L
    lo[d] = -box_bc
    hi[d] = box_bc
    lo[d + 1] = -box_bc
    hi[d + 1] = box_bc
    lo[d + 2] = t_lo
    hi[d + 2] = t_hi
    for i in range(T):
        lo[d + 3 + i] = v_lo[i]
        hi[d + 3 + i] = v_hi[i]
    s0 = d + 3 + T
    for k in range(T * d):
        hi[s0 + k] = L
    cvec[d + 2] = 1.0
    if bench >= 0:
        cvec[d + 3 + bench] -= 1.0
    for k in range(d):
        A[0, k] = X[k]
    A[0, d] = 1.0
    A[0, d + 2] = -1.0
    A[1, d + 1] = 1.0
    A[1, d + 2] = -1.0
    for p in range(P):
        A[2 + p, d + 3 + pair_y[p]] += 1.0
        A[2 + p, d + 3 + pair_w[p]] -= 1.0

    best = np.inf
    lp_count = 0
    feas = 0
    total = 1 << (nx + ny)
    for mask in range(total):
        r = 2 + P
        pos = 0
        for i in range(T):
            for j in range(T):
                if i == j:
                    continue
                for k in range(ncol):
                    A[r, k] = 0.0
                A[r, d + 3 + i] = -1.0
                A[r, d + 3 + j] = 1.0
                if (mask >> pos) & 1 == 0:
                    base = s0 + i * d
                    for k in range(d):
                        A[r, base + k] = -(pts[j, k] - pts[i, k])
                r += 1
                pos += 1
        for i in range(T):
            for k in range(ncol):
                A[r, k] = 0.0
            A[r, d + 3 + i] = 1.0
            if (mask >> (nx + i)) & 1 == 0:
                for k in range(d):
                    A[r, k] = -pts[i, k]
                A[r, d] = -1.0
            else:
                A[r, d + 1] = -1.0
            r += 1
        st, obj, x = full_solve(A, rel, rhs, cvec, lo, hi, max_iter)
        lp_count += 1
        if st == 0:
            feas += 1
            if obj < best:
                best = obj
    return best, lp_count, feas


def _enumerate_detail(spec: AmbiguitySpec, query, bigM=None):
    theta = build_theta(spec)
    T = theta.size
    nbin = T * (T - 1) + T
    if nbin > 20:
        raise ValueError(
            f"enumeration oracle supports at most 20 binaries, got {nbin}"
        )
    X = _query_vector(spec, query)
    L = float(spec.lipschitz_L)
    M = float(bigM) if bigM is not None else choose_bigM(theta, L, X)
    pts = theta.points
    n_pairs = sum(1 for role in theta.role_index if role.startswith("W("))
    pair_w = np.array(
        [theta.role_index[f"W({p})"] for p in range(1, n_pairs + 1)],
        dtype=np.int64,
    )
    pair_y = np.array(
        [theta.role_index[f"Y({p})"] for p in range(1, n_pairs + 1)],
        dtype=np.int64,
    )
    bench = theta.benchmark_index if theta.benchmark_index is not None else -1
    v_lo = -L * np.clip(-pts, 0.0, None).sum(axis=1)
    v_hi = L * np.clip(pts, 0.0, None).sum(axis=1)
    t_lo = -L * _neg_l1(X)
    t_hi = M + L * float(np.abs(X).sum()) + 1.0
    d = pts.shape[1]
    max_iter = 200 * (2 + len(pair_w) + nbin + d + 3 + T + T * d) + 10_000
    best, lp_count, feas = _enum_kernel(
        pts, X, L, pair_w, pair_y, bench, v_lo, v_hi, M, t_lo, t_hi, max_iter
    )
    if feas == 0:
        raise InconsistentDataError(
            "no admissible function rationalizes the comparison data"
        )
    return float(best), int(lp_count), int(feas)


def enumerate_oracle(spec: AmbiguitySpec, query) -> float:
    """Exact optimum by trying every binary assignment (guarded size)."""
    return _enumerate_detail(spec, query)[0]


# -- LP-format export -----------------------------------------------------


def _fmt_num(x: float) -> str:
    return f"{x:.17g}"


def _fmt_terms(coefs: np.ndarray, names: list[str]) -> str:
    parts = []
    for j in np.nonzero(coefs)[0]:
        cj = coefs[j]
        sign = "-" if cj < 0 else "+"
        mag = abs(cj)
        term = names[j] if mag == 1.0 else f"{_fmt_num(mag)} {names[j]}"
        if not parts:
            parts.append(term if sign == "+" else f"- {term}")
        else:
            parts.append(f"{sign} {term}")
    return " ".join(parts) if parts else "0 " + names[0]


def export_lp_file(model: MILPModel, path) -> None:
    """Industry LP text format (Minimize / Subject To / Bounds / Binaries).

    Variable names are stable across runs; binaries rely on the implied
    [0, 1] range of the Binaries section.
    """
    lp = model.lp
    names = lp.names
    rel_txt = {-1: "<=", 0: "=", 1: ">="}
    lines = ["Minimize" if lp.sense == "min" else "Maximize"]
    lines.append(" obj: " + _fmt_terms(lp.c, names))
    lines.append("Subject To")
    for i in range(lp.A.shape[0]):
        lines.append(
            f" {model.row_names[i]}: "
            + _fmt_terms(lp.A[i], names)
            + f" {rel_txt[int(lp.rel[i])]} {_fmt_num(lp.b[i])}"
        )
    lines.append("Bounds")
    binset = set(model.binary_variable_indices)
    for j, name in enumerate(names):
        if j in binset:
            continue
        lo, hi = lp.lo[j], lp.hi[j]
        if lo == -np.inf and hi == np.inf:
            lines.append(f" {name} free")
        elif lo == -np.inf:
            lines.append(f" -inf <= {name} <= {_fmt_num(hi)}")
        elif hi == np.inf:
            lines.append(f" {name} >= {_fmt_num(lo)}")
        else:
            lines.append(f" {_fmt_num(lo)} <= {name} <= {_fmt_num(hi)}")
    lines.append("Binaries")
    bnames = [names[j] for j in model.binary_variable_indices]
    for k in range(0, len(bnames), 8):
        lines.append(" " + " ".join(bnames[k : k + 8]))
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
