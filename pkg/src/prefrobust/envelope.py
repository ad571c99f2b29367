"""Hockey-stick supports, quasi-concave envelopes, and Delaunay worst cases.

A hockey stick h(x) = max{<a, x> + b, c} with a >= 0 is nondecreasing and
quasi-concave. Given values v_theta on a finite point set, the worst-case
(lowest) nondecreasing quasi-concave majorant is the pointwise infimum of
such sticks; with a Lipschitz budget L the slopes are capped at L.

Implementation notes:
  * envelope_value without L uses the level-set identity
    {x : f(x) >= t} = conv{theta : v_theta >= t}; t only needs to range
    over the attained values, so a binary search over the sorted levels is
    exact.
  * envelope_value with L minimizes over the stick family directly. For
    any optimal stick, c can be lowered to the largest v_theta it covers,
    so only |levels| + 1 threshold LPs are needed; again exact.
  * Delaunay triangulation is incremental (Bowyer-Watson) for d <= 3,
    self-verified against the empty-circumsphere definition, with a
    deterministic perturbation fallback for degenerate input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ThetaSet
from .lp import FeasibilityResult, LinearProgram, check_feasibility, solve_lp

__all__ = [
    "HockeyStick",
    "ValueAssignment",
    "OutOfHullError",
    "DegenerateGeometryError",
    "hockey_eval",
    "consistency_check",
    "envelope_value",
    "delaunay_triangulation",
    "delaunay_worst_case",
    "delaunay_worst_case_lipschitz",
]


class OutOfHullError(ValueError):
    """Query point lies outside the convex hull of the point set."""


class DegenerateGeometryError(ValueError):
    """Point set is affinely degenerate or could not be triangulated."""


@dataclass(frozen=True)
class HockeyStick:
    """max{<a, x> + b, c} with nonnegative slope vector a."""

    a: np.ndarray
    b: float
    c: float

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)):
            raise ValueError("slope vector must be a finite 1-d array")
        if np.any(a < 0):
            raise ValueError("slope vector must be nonnegative")
        if not (np.isfinite(self.b) and np.isfinite(self.c)):
            raise ValueError("offsets must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "c", float(self.c))


def hockey_eval(h: HockeyStick, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != h.a.shape:
        raise ValueError("dimension mismatch")
    return float(max(float(h.a @ x) + h.b, h.c))


@dataclass(frozen=True)
class ValueAssignment:
    """One value per point of a ThetaSet, aligned with its row order."""

    theta: ThetaSet
    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.shape != (self.theta.size,):
            raise ValueError("one value per point required")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)


def consistency_check(va: ValueAssignment, L: float) -> FeasibilityResult:
    """Can some nondecreasing quasi-concave L-Lipschitz function attain v?

    The defining system asks, for every ordered pair (theta, theta'),
    that either v_theta >= v_theta' or some subgradient s in [0, L]^d has
    <s, theta' - theta> >= v_theta' - v_theta. Points with lower-or-equal
    value satisfy the first branch outright, so the system decomposes into
    one small feasibility LP per point over its own s.
    """
    if L <= 0:
        raise ValueError("Lipschitz bound must be positive")
    pts = va.theta.points
    v = va.v
    T, d = pts.shape
    worst = 0.0
    for i in range(T):
        rows = []
        for j in range(T):
            if v[j] > v[i]:
                rows.append((pts[j] - pts[i], ">=", v[j] - v[i]))
        if not rows:
            continue
        lp = LinearProgram.build(
            np.zeros(d), rows, lo=np.zeros(d), hi=np.full(d, float(L))
        )
        res = check_feasibility(lp)
        if not res.feasible:
            worst = max(worst, res.infeasibility)
    return FeasibilityResult(worst == 0.0, worst)


def _in_hull(points: np.ndarray, x: np.ndarray) -> bool:
    """LP membership test: x in conv(points)."""
    T, d = points.shape
    rows = [(points[:, j], "==", x[j]) for j in range(d)]
    rows.append((np.ones(T), "==", 1.0))
    lp = LinearProgram.build(
        np.zeros(T), rows, lo=np.zeros(T), hi=np.ones(T)
    )
    return check_feasibility(lp).feasible


def envelope_value(va: ValueAssignment, x, L: float | None = None) -> float:
    """Lowest nondecreasing quasi-concave majorant of v, evaluated at x.

    Without L the value is the largest level t with x in
    conv{theta : v_theta >= t}; -inf when x is outside conv(Theta).
    With L the value is the minimum over hockey sticks with slopes in
    [0, L] that majorize v on Theta.
    """
    pts = va.theta.points
    v = va.v
    x = np.asarray(x, dtype=float)
    if x.shape != (pts.shape[1],):
        raise ValueError("dimension mismatch")
    levels = np.unique(v)  # ascending
    if L is None:
        # binary search for the top attainable level; membership is
        # monotone in t because the candidate hull shrinks as t grows
        if not _in_hull(pts, x):
            return float("-inf")
        lo, hi = 0, levels.size - 1  # levels[lo] known feasible
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if _in_hull(pts[v >= levels[mid]], x):
                lo = mid
            else:
                hi = mid - 1
        return float(levels[lo])
    if L <= 0:
        raise ValueError("Lipschitz bound must be positive")
    d = pts.shape[1]
    best = np.inf
    # threshold tau = value handled by the constant branch c; tau = None
    # means the affine branch covers every point
    for tau in [None, *levels.tolist()]:
        if tau is None:
            above = np.ones(v.size, dtype=bool)
        else:
            above = v > tau
        if not np.any(above):
            cand = tau
        else:
            rows = [
                (np.concatenate([pts[i], [1.0]]), ">=", v[i])
                for i in np.nonzero(above)[0]
            ]
            lp = LinearProgram.build(
                np.concatenate([x, [1.0]]),
                rows,
                lo=np.concatenate([np.zeros(d), [-np.inf]]),
                hi=np.concatenate([np.full(d, float(L)), [np.inf]]),
            )
            sol = solve_lp(lp)
            if sol.status != "optimal":
                raise RuntimeError(f"threshold LP {sol.status}")
            cand = sol.objective if tau is None else max(tau, sol.objective)
        best = min(best, cand)
    return float(best)


# -- Delaunay triangulation (d <= 3) -------------------------------------

_DEGEN_TOL = 1e-9


def _orient(simplex_pts: np.ndarray) -> float:
    """Signed volume determinant of a full simplex (d+1 points, d dims)."""
    return float(np.linalg.det(simplex_pts[1:] - simplex_pts[0]))


def _insphere(simplex_pts: np.ndarray, q: np.ndarray, scale: float) -> float:
    """Positive when q is strictly inside the circumsphere.

    Rows (p_i - q, |p_i - q|^2); sign fixed by the simplex orientation
    and a (-1)^d factor (the raw determinant's inside-sign alternates
    with dimension). Normalized by scale so thresholds are relative.
    """
    diff = simplex_pts - q
    M = np.concatenate([diff, (diff * diff).sum(axis=1, keepdims=True)], axis=1)
    det = float(np.linalg.det(M))
    orient = _orient(simplex_pts)
    d = simplex_pts.shape[1]
    norm = scale ** (d + 2)
    if abs(orient) < _DEGEN_TOL * scale**d:
        raise _NearDegenerate("flat simplex")
    return det * np.sign(orient) * (-1.0) ** d / norm


class _NearDegenerate(Exception):
    pass


def _bowyer_watson(pts: np.ndarray, span: float, factor: float):
    """Incremental insertion with a super simplex; returns index tuples."""
    n, d = pts.shape
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    R = factor * (span + 1.0)
    base = np.full(d, -1.0)
    sup = [center + R * base]
    for i in range(d):
        e = np.full(d, -1.0)
        e[i] = d + 1.5
        sup.append(center + R * e)
    allpts = np.vstack([pts, np.array(sup)])
    tris = [tuple(range(n, n + d + 1))]
    for p in range(n):
        q = allpts[p]
        bad = []
        for t_i, tri in enumerate(tris):
            if _insphere(allpts[list(tri)], q, span + 1.0) > _DEGEN_TOL:
                bad.append(t_i)
        if not bad:
            raise _NearDegenerate("point not inside any circumsphere")
        faces = {}
        for t_i in bad:
            tri = tris[t_i]
            for drop in range(d + 1):
                face = tuple(sorted(tri[:drop] + tri[drop + 1 :]))
                faces[face] = faces.get(face, 0) + 1
        tris = [t for i, t in enumerate(tris) if i not in set(bad)]
        for face, cnt in faces.items():
            if cnt == 1:
                tris.append(tuple(sorted(face + (p,))))
    keep = [t for t in tris if max(t) < n]
    return keep


def _verify_delaunay(pts: np.ndarray, tris, span: float) -> bool:
    used = set()
    for tri in tris:
        used.update(tri)
        sp = pts[list(tri)]
        if abs(_orient(sp)) < _DEGEN_TOL * (span + 1.0) ** pts.shape[1]:
            return False
        for p in range(pts.shape[0]):
            if p in tri:
                continue
            if _insphere(sp, pts[p], span + 1.0) > 1e-7:
                return False
    return used == set(range(pts.shape[0]))


def delaunay_triangulation(points) -> list[tuple[int, ...]]:
    """Delaunay simplices (vertex index tuples) of a d <= 3 point set.

    Degenerate input (duplicate points, affine dependence, cospherical
    groups) triggers one deterministic perturbation retry with a warning;
    if that also fails, raises DegenerateGeometryError.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("expected a 2-d point array")
    n, d = pts.shape
    if d > 3:
        raise ValueError("triangulation supports at most 3 dimensions")
    if n < d + 1:
        raise DegenerateGeometryError("not enough points for a full simplex")
    span = float(np.ptp(pts, axis=0).max())
    if np.linalg.matrix_rank(pts[1:] - pts[0], tol=1e-9 * (span + 1.0)) < d:
        raise DegenerateGeometryError("points are affinely dependent")

    def attempt(p):
        last = _NearDegenerate("triangulation failed")
        for factor in (64.0, 512.0, 4096.0):
            try:
                tris = _bowyer_watson(p, span, factor)
            except _NearDegenerate as exc:
                last = exc
                continue
            if _verify_delaunay(p, tris, span):
                return tris
            last = _NearDegenerate("verification failed")
        raise last

    try:
        return attempt(pts)
    except _NearDegenerate:
        # jitter must clear the flat-simplex and insphere thresholds, so
        # it is several orders larger than the degeneracy tolerance
        rng = np.random.default_rng(0)
        jitter = 1e-6 * (span + 1.0) * rng.standard_normal(pts.shape)
        warnings.warn(
            "degenerate point configuration; applied a deterministic "
            "perturbation before triangulating",
            RuntimeWarning,
            stacklevel=2,
        )
        try:
            return attempt(pts + jitter)
        except _NearDegenerate as exc:
            raise DegenerateGeometryError(str(exc)) from None


_tri_cache: dict[bytes, list] = {}


def _cached_triangulation(pts: np.ndarray):
    key = pts.tobytes()
    tris = _tri_cache.get(key)
    if tris is None:
        tris = delaunay_triangulation(pts)
        if len(_tri_cache) > 64:
            _tri_cache.clear()
        _tri_cache[key] = tris
    return tris


def _containing(pts: np.ndarray, tris, x: np.ndarray):
    """Simplices whose closed hull contains x (barycentric test)."""
    out = []
    for tri in tris:
        sp = pts[list(tri)]
        A = np.vstack([sp.T, np.ones(len(tri))])
        rhs = np.concatenate([x, [1.0]])
        try:
            lam = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            continue
        if np.all(lam >= -1e-9):
            out.append((tri, lam))
    return out


def delaunay_worst_case(va: ValueAssignment, x) -> float:
    """Piecewise-constant worst case: max over the Delaunay faces that
    contain x of the minimum vertex value.

    The max ranges over every face of the complex, not only the full
    simplices. Within one containing simplex the smallest face holding x
    is spanned by the vertices with positive barycentric weight, and that
    face realizes the largest min, so only the weight support matters.
    On simplex interiors this reduces to the plain min over all vertices.

    Caveat: this formula never exceeds envelope_value(va, x) and matches
    it exactly when every upper level set conv{theta : v_theta >= t} is a
    union of triangulation faces (always true in one dimension for
    monotone values). When a level hull cuts across a simplex the formula
    is strictly below the envelope on part of that simplex; see
    envelope_value for the exact quantity.
    """
    pts = va.theta.points
    x = np.asarray(x, dtype=float)
    if x.shape != (pts.shape[1],):
        raise ValueError("dimension mismatch")
    tris = _cached_triangulation(pts)
    hits = _containing(pts, tris, x)
    if not hits:
        raise OutOfHullError("query point outside the convex hull")
    return float(
        max(va.v[list(tri)][lam > 1e-9].min() for tri, lam in hits)
    )


def delaunay_worst_case_lipschitz(va: ValueAssignment, x) -> float:
    """Piecewise-linear worst case: the simplex-wise affine interpolant.

    Continuous across shared faces, so any containing simplex gives the
    same value.
    """
    pts = va.theta.points
    x = np.asarray(x, dtype=float)
    if x.shape != (pts.shape[1],):
        raise ValueError("dimension mismatch")
    tris = _cached_triangulation(pts)
    hits = _containing(pts, tris, x)
    if not hits:
        raise OutOfHullError("query point outside the convex hull")
    tri, lam = hits[0]
    sp = pts[list(tri)]
    A = np.hstack([sp, np.ones((len(tri), 1))])
    try:
        coef = np.linalg.solve(A, va.v[list(tri)])
    except np.linalg.LinAlgError:
        raise DegenerateGeometryError("singular interpolation system") from None
    return float(coef[:-1] @ x + coef[-1])
