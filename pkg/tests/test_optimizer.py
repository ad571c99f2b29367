"""Level-function maximization: gap LP, projection, and the outer loop."""

import math

import numpy as np
import pytest

from prefrobust.core import AmbiguitySpec, ComparisonPair, Prospect, SampleSpace
from prefrobust.lp import LinearProgram, solve_lp
from prefrobust.optimizer import (
    ConcaveMap,
    DecisionProblem,
    LevelFunctionRec,
    PiecewiseTerm,
    PLFMTrace,
    delta_max,
    estimate_constants,
    iteration_bound,
    level_function_at,
    project_onto_Qi,
    run_plfm,
)
from prefrobust.optimizer import IterationRecord
from prefrobust.robust_eval import evaluate_psi


def trivial_ambiguity(n, k, L=1.0):
    labels = tuple(f"s{i + 1}" for i in range(k))
    ss = SampleSpace(labels, np.full(k, 1.0 / k))
    return AmbiguitySpec(
        ss, (), lipschitz_L=L, benchmark=Prospect(np.zeros((n, k)))
    )


def corner_problem():
    # G(z) = z - 5 stays negative on the unit box, so the worst case over
    # the unconstrained family is the sum of the components: an affine
    # objective with its maximum at the corner (1, 1), value -8.
    gmap = ConcaveMap.affine(np.eye(2), [-5.0, -5.0], 2, 1)
    return DecisionProblem((), np.zeros(2), np.ones(2), gmap, trivial_ambiguity(2, 1))


def elicited_problem():
    ss = SampleSpace(("s1", "s2"), np.array([0.5, 0.5]))
    Y1 = Prospect(np.array([[0.2, -0.3], [0.4, 0.1]]))
    W1 = Prospect(Y1.values + 0.6)
    Y2 = Prospect(np.array([[-0.5, 0.2], [0.0, -0.2]]))
    W2 = Prospect(Y2.values + np.array([[0.8], [0.3]]))
    amb = AmbiguitySpec(
        ss,
        (ComparisonPair(W1, Y1), ComparisonPair(W2, Y2)),
        lipschitz_L=1.0,
        benchmark=Prospect(np.zeros((2, 2))),
    )
    terms = (
        (PiecewiseTerm([[1.0, 0.5], [-1.0, 0.0]], [-0.5, 0.7]),),
        (PiecewiseTerm([[0.0, 0.8], [-0.3, 0.0]], [-0.3, 0.5]),),
        (PiecewiseTerm([[1.0, 1.0], [-0.5, -0.2]], [-0.8, 0.7]),),
        (PiecewiseTerm([[0.6, 0.0], [0.0, -0.4]], [-0.4, 0.5]),),
    )
    gmap = ConcaveMap(terms, 2, 2)
    rows = ((np.array([1.0, 1.0]), "<=", 1.6),)
    return DecisionProblem(rows, np.zeros(2), np.ones(2), gmap, amb)


# -- maps and problem construction ----------------------------------------


def test_piecewise_term_value():
    t = PiecewiseTerm([[1.0, 0.0], [0.0, 2.0]], [0.5, -1.0])
    assert t.value(np.array([1.0, 1.0])) == pytest.approx(1.0)
    assert t.value(np.array([3.0, 0.2])) == pytest.approx(-0.6)


def test_piecewise_term_validation():
    with pytest.raises(ValueError):
        PiecewiseTerm([[1.0, 0.0]], [0.5, 1.0])
    with pytest.raises(ValueError):
        PiecewiseTerm([[np.inf, 0.0]], [0.5])


def test_concave_map_sums_terms():
    terms = (
        (
            PiecewiseTerm([[1.0, 0.0]], [0.0]),
            PiecewiseTerm([[0.0, 1.0], [0.0, -1.0]], [0.0, 1.0]),
        ),
    )
    gmap = ConcaveMap(terms, 1, 1)
    z = np.array([0.3, 0.8])
    want = 0.3 + min(0.8, 1.0 - 0.8)
    assert gmap.value_flat(z)[0] == pytest.approx(want)
    assert gmap.prospect(z).values.shape == (1, 1)


def test_concave_map_validation():
    good = PiecewiseTerm([[1.0, 0.0]], [0.0])
    with pytest.raises(ValueError):
        ConcaveMap(((good,),), 2, 1)
    with pytest.raises(ValueError):
        ConcaveMap(((good,), ()), 2, 1)
    with pytest.raises(ValueError):
        ConcaveMap(((good,), (PiecewiseTerm([[1.0]], [0.0]),)), 2, 1)


def test_affine_map_matches_matrix():
    A = np.array([[2.0, -1.0], [0.5, 0.0], [1.0, 1.0]])
    b = np.array([0.1, -0.2, 0.3])
    gmap = ConcaveMap.affine(A, b, 3, 1)
    z = np.array([0.4, -0.7])
    assert np.allclose(gmap.value_flat(z), A @ z + b)


def test_decision_problem_box_and_diameter():
    dp = corner_problem()
    assert np.allclose(dp.zbox_lo, [0.0, 0.0])
    assert np.allclose(dp.zbox_hi, [1.0, 1.0])
    assert dp.diameter() == pytest.approx(math.sqrt(2.0))


def test_decision_problem_rows_tighten_box():
    gmap = ConcaveMap.affine(np.eye(2), [0.0, 0.0], 2, 1)
    rows = ((np.array([1.0, 1.0]), "<=", 0.5),)
    dp = DecisionProblem(rows, np.zeros(2), np.ones(2), gmap, trivial_ambiguity(2, 1))
    assert np.allclose(dp.zbox_hi, [0.5, 0.5])


def test_decision_problem_empty_and_unbounded():
    gmap = ConcaveMap.affine(np.eye(2), [0.0, 0.0], 2, 1)
    amb = trivial_ambiguity(2, 1)
    rows = ((np.array([1.0, 0.0]), "<=", -1.0),)
    with pytest.raises(ValueError, match="empty"):
        DecisionProblem(rows, np.zeros(2), np.ones(2), gmap, amb)
    with pytest.raises(ValueError, match="unbounded"):
        DecisionProblem((), np.zeros(2), None, gmap, amb)


# -- level functions -------------------------------------------------------


def test_sigma_zero_at_own_anchor():
    dp = elicited_problem()
    rec = level_function_at(np.array([0.3, 0.7]), dp)
    assert rec.sigma(rec.anchor, dp.gmap) == pytest.approx(0.0, abs=1e-12)
    assert np.all(rec.a >= -1e-12)


def test_zero_slope_gives_zero_sigma():
    dp = corner_problem()
    rec = LevelFunctionRec(
        np.zeros(2), np.zeros(2), -8.0, dp.gmap.value_flat(np.zeros(2))
    )
    rng = np.random.default_rng(3)
    for _ in range(5):
        z = rng.uniform(0.0, 1.0, 2)
        assert rec.sigma(z, dp.gmap) == 0.0


def test_sigma_nonnegative_where_objective_improves():
    # points that beat the anchor's worst case lie in the level set
    dp = elicited_problem()
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(10):
        za = rng.uniform(0.0, 0.8, 2)
        zb = rng.uniform(0.0, 0.8, 2)
        rec = level_function_at(za, dp)
        psi_b = evaluate_psi(dp.ambiguity, dp.gmap.prospect(zb)).psi_value
        if psi_b > rec.value_at_anchor + 1e-7:
            assert rec.sigma(zb, dp.gmap) >= -1e-6
            checked += 1
    assert checked >= 3


def test_sigma_midpoint_concave():
    dp = elicited_problem()
    rec = level_function_at(np.array([0.2, 0.2]), dp)
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.uniform(0.0, 1.0, 2)
        y = rng.uniform(0.0, 1.0, 2)
        mid = rec.sigma((x + y) / 2.0, dp.gmap)
        mean = 0.5 * (rec.sigma(x, dp.gmap) + rec.sigma(y, dp.gmap))
        assert mid >= mean - 1e-9


# -- level-gap maximization ------------------------------------------------


def test_delta_zero_at_maximizer():
    dp = corner_problem()
    anchor = np.array([1.0, 1.0])
    rec = LevelFunctionRec(
        anchor, np.array([1.0, 1.0]), -8.0, dp.gmap.value_flat(anchor)
    )
    delta, _ = delta_max([rec], dp)
    assert delta == pytest.approx(0.0, abs=1e-9)


def test_delta_unit_interval():
    gmap = ConcaveMap.affine([[1.0]], [0.0], 1, 1)
    dp = DecisionProblem((), np.zeros(1), np.ones(1), gmap, trivial_ambiguity(1, 1))
    rec = LevelFunctionRec(np.zeros(1), np.ones(1), 0.0, np.zeros(1))
    delta, arg = delta_max([rec], dp)
    assert delta == pytest.approx(1.0, abs=1e-9)
    assert arg[0] == pytest.approx(1.0, abs=1e-9)


def test_delta_requires_level_functions():
    with pytest.raises(ValueError):
        delta_max([], corner_problem())


def _min_sigma_on_grid(lfs, gmap, pts):
    comps = []
    for ts in gmap.terms:
        comp = np.zeros(len(pts))
        for t in ts:
            comp += np.min(pts @ t.coefs.T + t.consts, axis=1)
        comps.append(comp)
    G = np.stack(comps, axis=1)
    best = np.full(len(pts), np.inf)
    for rec in lfs:
        best = np.minimum(best, (G - rec.g_at_anchor) @ rec.a)
    return best


def test_delta_matches_grid_search():
    rng = np.random.default_rng(11)
    amb = trivial_ambiguity(2, 1)
    ax = np.linspace(0.0, 1.0, 161)
    mesh = np.stack([g.ravel() for g in np.meshgrid(ax, ax)], axis=1)
    for _ in range(5):
        terms = tuple(
            (
                PiecewiseTerm(
                    rng.uniform(-1.0, 1.0, (2, 2)), rng.uniform(-0.5, 0.5, 2)
                ),
                PiecewiseTerm(
                    rng.uniform(-1.0, 1.0, (1, 2)), rng.uniform(-0.5, 0.5, 1)
                ),
            )
            for _ in range(2)
        )
        gmap = ConcaveMap(terms, 2, 1)
        dp = DecisionProblem((), np.zeros(2), np.ones(2), gmap, amb)
        lfs = []
        for _ in range(3):
            anchor = rng.uniform(0.0, 1.0, 2)
            a = rng.uniform(0.0, 1.0, 2)
            lfs.append(
                LevelFunctionRec(anchor, a, 0.0, gmap.value_flat(anchor))
            )
        delta, arg = delta_max(lfs, dp)
        grid_best = float(_min_sigma_on_grid(lfs, gmap, mesh).max())
        # the grid never beats the exact optimum; the optimum sits within
        # one Lipschitz cell radius of the best grid value
        lip = max(
            float(
                sum(
                    rec.a[ci] * np.linalg.norm(t.coefs, axis=1).max()
                    for ci, ts in enumerate(gmap.terms)
                    for t in ts
                )
            )
            for rec in lfs
        )
        h = ax[1] - ax[0]
        assert grid_best <= delta + 1e-7
        assert delta <= grid_best + lip * h * math.sqrt(2.0) + 1e-7
        at_arg = float(
            _min_sigma_on_grid(lfs, gmap, arg.reshape(1, 2))[0]
        )
        assert at_arg == pytest.approx(delta, abs=1e-8)


# -- projection --------------------------------------------------------------


def test_projection_fixed_point_inside_region():
    dp = corner_problem()
    rec = LevelFunctionRec(
        np.zeros(2), np.array([1.0, 1.0]), -10.0, dp.gmap.value_flat(np.zeros(2))
    )
    z_ref = np.array([0.7, 0.6])
    z, gap = project_onto_Qi(z_ref, [rec], 0.5, dp)
    assert np.linalg.norm(z - z_ref) <= 2e-4
    assert gap <= 1e-8 * (1.0 + z_ref @ z_ref) + 1e-15
    assert rec.sigma(z, dp.gmap) >= 0.5 - 1e-7


def test_projection_interval():
    gmap = ConcaveMap.affine([[1.0]], [0.0], 1, 1)
    dp = DecisionProblem(
        (), np.zeros(1), np.full(1, 2.0), gmap, trivial_ambiguity(1, 1)
    )
    rec = LevelFunctionRec(np.full(1, 2.0), np.ones(1), 0.0, np.full(1, 2.0))
    z, _ = project_onto_Qi(np.zeros(1), [rec], -1.0, dp)
    assert z[0] == pytest.approx(1.0, abs=1e-6)


def test_projection_empty_region_raises():
    dp = corner_problem()
    rec = LevelFunctionRec(
        np.zeros(2), np.array([1.0, 1.0]), -10.0, dp.gmap.value_flat(np.zeros(2))
    )
    delta, _ = delta_max([rec], dp)
    with pytest.raises(RuntimeError, match="empty"):
        project_onto_Qi(np.zeros(2), [rec], delta + 1.0, dp)


def _enum_project(rows_le, z_ref):
    """Exact 2-dim projection onto {z : c @ z <= v rows} by active sets."""
    C = np.array([c for c, _ in rows_le])
    V = np.array([v for _, v in rows_le])

    def feasible(z):
        return bool(np.all(C @ z <= V + 1e-9))

    if feasible(z_ref):
        return z_ref.copy()
    cands = []
    nr = len(rows_le)
    for i in range(nr):
        A = C[[i]]
        M = A @ A.T
        if abs(M[0, 0]) < 1e-12:
            continue
        z = z_ref + A.T @ np.linalg.solve(M, V[[i]] - A @ z_ref)
        cands.append(z)
    for i in range(nr):
        for j in range(i + 1, nr):
            A = C[[i, j]]
            M = A @ A.T
            if abs(np.linalg.det(M)) < 1e-10:
                continue
            z = z_ref + A.T @ np.linalg.solve(M, V[[i, j]] - A @ z_ref)
            cands.append(z)
    best, bestf = None, np.inf
    for z in cands:
        if feasible(z):
            f = float((z - z_ref) @ (z - z_ref))
            if f < bestf:
                bestf, best = f, z
    return best


def test_projection_matches_active_set_oracle():
    # affine prospect map makes the region a polyhedron in decision space
    tested = 0
    for seed in range(40):
        if tested >= 10:
            break
        rng = np.random.default_rng(100 + seed)
        A = rng.uniform(-1.0, 1.0, (2, 2))
        b = rng.uniform(-0.5, 0.5, 2)
        gmap = ConcaveMap.affine(A, b, 2, 1)
        row_c = rng.normal(size=2)
        row_v = rng.uniform(0.5, 1.5)
        dp = DecisionProblem(
            ((row_c, "<=", row_v),),
            -np.ones(2),
            np.ones(2),
            gmap,
            trivial_ambiguity(2, 1),
        )
        lfs = []
        for _ in range(2):
            anchor = rng.uniform(-1.0, 1.0, 2)
            a = rng.uniform(0.05, 1.0, 2)
            lfs.append(LevelFunctionRec(anchor, a, 0.0, gmap.value_flat(anchor)))
        delta, _ = delta_max(lfs, dp)
        if delta < 1e-3:
            continue
        thr = 0.5 * delta
        z_ref = rng.uniform(-2.0, 2.0, 2)
        z_fw, _ = project_onto_Qi(z_ref, lfs, thr, dp, gap_tol=1e-12)
        rows_le = [
            (np.array([1.0, 0.0]), 1.0),
            (np.array([-1.0, 0.0]), 1.0),
            (np.array([0.0, 1.0]), 1.0),
            (np.array([0.0, -1.0]), 1.0),
            (row_c, row_v),
        ]
        for rec in lfs:
            rows_le.append(
                (-(rec.a @ A), float(rec.a @ (b - rec.g_at_anchor)) - thr)
            )
        z_qp = _enum_project(rows_le, z_ref)
        assert z_qp is not None
        assert np.linalg.norm(z_fw - z_qp) <= 1e-5
        tested += 1
    assert tested >= 8


# -- outer loop --------------------------------------------------------------


def test_run_converges_to_corner():
    dp = corner_problem()
    trace = run_plfm(dp, lam=0.999, eps=1e-4)
    assert trace.termination == "converged"
    assert len(trace.records) <= 3
    assert np.allclose(trace.incumbent_z, [1.0, 1.0], atol=1e-4)
    assert trace.incumbent_psi == pytest.approx(-8.0, abs=1e-3)


def test_run_default_lambda_contracts_geometrically():
    # with one affine objective the gap contracts by (1 - lambda) per
    # projection, so eight iterations reach 1e-4 from a gap of 2
    dp = corner_problem()
    trace = run_plfm(dp)
    assert trace.termination == "converged"
    assert len(trace.records) <= 10
    assert trace.records[-1].delta <= 1e-4
    assert trace.incumbent_psi == pytest.approx(-8.0, abs=2e-4)


def test_run_matches_lp_optimum_on_affine_objective():
    dp = corner_problem()
    sol = solve_lp(
        LinearProgram.build(
            np.ones(2), list(dp.rows), lo=dp.lo, hi=dp.hi, sense="max"
        )
    )
    lp_opt = sol.objective - 10.0
    trace = run_plfm(dp, eps=1e-6)
    assert abs(trace.incumbent_psi - lp_opt) <= 1e-5


def test_run_starts_at_given_point():
    dp = corner_problem()
    trace = run_plfm(dp, z0=np.array([1.0, 1.0]))
    assert trace.termination == "converged"
    assert len(trace.records) == 1
    assert math.isnan(trace.records[0].projection_residual)
    assert trace.incumbent_psi == pytest.approx(-8.0, abs=1e-9)


def test_run_iteration_cap():
    dp = corner_problem()
    trace = run_plfm(dp, eps=1e-12, max_iter=2)
    assert trace.termination == "iteration cap"
    assert len(trace.records) == 2


def test_run_validation():
    dp = corner_problem()
    for lam in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            run_plfm(dp, lam=lam)
    with pytest.raises(ValueError):
        run_plfm(dp, eps=0.0)


def test_run_elicited_instance():
    dp = elicited_problem()
    trace = run_plfm(dp, max_iter=60)
    assert trace.termination == "converged"
    deltas = [r.delta for r in trace.records]
    assert all(d2 <= d1 + 1e-9 for d1, d2 in zip(deltas, deltas[1:]))
    best = -math.inf
    for r in trace.records:
        best = max(best, r.psi)
    assert best == pytest.approx(trace.incumbent_psi, abs=1e-12)
    # residuals stay within the stated projection tolerance
    for r in trace.records[:-1]:
        assert r.projection_residual <= 1e-8 * (1.0 + 2.0) + 1e-15
    K, D = estimate_constants(dp)
    assert len(trace.records) <= iteration_bound(K, D, 1e-4, 0.8)
    # collected level functions obey the anchor axioms
    for r in trace.records[:3]:
        rec = level_function_at(r.z, dp)
        assert abs(rec.sigma(rec.anchor, dp.gmap)) <= 1e-12
        assert np.all(rec.a >= -1e-12)


def test_incumbent_never_decreases():
    dp = elicited_problem()
    trace = run_plfm(dp, max_iter=60)
    best = -math.inf
    for r in trace.records:
        best = max(best, r.psi)
        assert best >= r.psi


# -- bound arithmetic and constants -----------------------------------------


def test_iteration_bound_values():
    assert iteration_bound(1.0, 1.0, 0.1, 0.8) == 435
    assert iteration_bound(1.0, 2.0, 0.1, 0.8) == 1737


def test_iteration_bound_validation():
    with pytest.raises(ValueError):
        iteration_bound(0.0, 1.0, 0.1, 0.8)
    with pytest.raises(ValueError):
        iteration_bound(1.0, 1.0, -0.1, 0.8)
    with pytest.raises(ValueError):
        iteration_bound(1.0, 1.0, 0.1, 1.0)


def test_estimate_constants_on_box():
    dp = corner_problem()
    K, D = estimate_constants(dp)
    assert K == pytest.approx(2.0)
    assert D == pytest.approx(math.sqrt(2.0))
    assert len(run_plfm(dp).records) <= iteration_bound(K, D, 1e-4, 0.8)


# -- trace export ------------------------------------------------------------


def test_trace_csv_layout():
    trace = PLFMTrace()
    trace.records.append(IterationRecord(0, np.zeros(2), -10.0, 2.0, 1.5e-9))
    trace.records.append(IterationRecord(1, np.ones(2), -8.0, 0.4, math.nan))
    text = trace.to_csv()
    lines = text.splitlines()
    assert lines[0] == "iteration,psi,delta,projection_residual"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) == -10.0
    assert float(first[2]) == 2.0
    assert math.isnan(float(lines[2].split(",")[3]))
    assert text.endswith("\n")
