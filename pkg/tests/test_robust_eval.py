"""Worst-case evaluation: model construction, branch-and-bound vs. the
exhaustive oracle, invariants, and LP-file export."""

import re as _re
from importlib.resources import files

import numpy as np
import pytest

from prefrobust import core, robust_eval
from prefrobust.core import (
    AmbiguitySpec,
    ComparisonPair,
    InconsistentDataError,
    Prospect,
    SampleSpace,
    ThetaSet,
)


def one_scenario_space():
    return SampleSpace(("s",), np.array([1.0]))


def make_theta(points, roles):
    pts = np.asarray(points, float)
    idx = {r: i for i, rs in enumerate(roles) for r in rs}
    return ThetaSet(pts, roles, idx)


def make_spec(pairs_vals, L=1.0, bench=None, k=1):
    space = SampleSpace(tuple(f"s{i}" for i in range(k)), np.full(k, 1.0 / k))
    pairs = tuple(
        ComparisonPair(Prospect(np.asarray(w, float)), Prospect(np.asarray(y, float)))
        for w, y in pairs_vals
    )
    b = Prospect(np.asarray(bench, float)) if bench is not None else None
    return AmbiguitySpec(space, pairs, L, b)


def shipped_spec(L=1.0 / 12.0):
    text = (files("prefrobust") / "data" / "elicited_pairs.txt").read_text()
    return core.parse_dataset(text, lipschitz_L=L)


def random_tiny_spec(rng, allow_bench=True):
    """Spec whose theta stays within the 20-binary enumeration guard."""
    n = int(rng.integers(1, 4))
    k = 1
    space = SampleSpace(("s",), np.array([1.0]))
    layout = rng.choice(["empty", "pair", "pair_bench", "bench"])
    pairs = []
    bench = None
    if layout in ("pair", "pair_bench"):
        W = Prospect(rng.uniform(-2, 2, size=(n, k)))
        Y = Prospect(rng.uniform(-2, 2, size=(n, k)))
        pairs.append(ComparisonPair(W, Y))
    if layout in ("pair_bench", "bench") and allow_bench:
        bench = Prospect(rng.uniform(-2, 2, size=(n, k)))
    if not pairs and bench is None:
        n = 1
    L = float(rng.uniform(0.3, 2.0))
    spec = AmbiguitySpec(space, tuple(pairs), L, bench)
    X = Prospect(rng.uniform(-2.5, 2.5, size=(spec.n, k)))
    return spec, X


def test_choose_bigM_zero_only():
    theta = make_theta(np.zeros((1, 1)), (("zero",),))
    assert robust_eval.choose_bigM(theta, 1.0) == 1.0


def test_choose_bigM_unit_points():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    theta = make_theta(pts, (("zero",), ("W(1)",), ("Y(1)",)))
    assert robust_eval.choose_bigM(theta, 1.0) == 5.0


def test_choose_bigM_dominates_value_range():
    spec = shipped_spec()
    theta = core.build_theta(spec)
    M = robust_eval.choose_bigM(theta, spec.lipschitz_L)
    vmax = spec.lipschitz_L * np.abs(theta.points).sum(axis=1).max()
    assert M > vmax


def test_model_counts_single_point():
    theta = make_theta(np.zeros((1, 1)), (("zero",),))
    inst = robust_eval.RobustInstance(theta, np.array([0.5]), 1.0, 1.0)
    model = robust_eval.build_robust_milp(inst)
    x_cols = model.groups["x"]
    assert len(x_cols) == 0
    assert len(model.groups["y"]) == 1
    # a, b, c, t, v_0, s_0 and one binary
    assert model.lp.A.shape[1] == 1 + 3 + 1 + 1 + 1
    assert model.binary_variable_indices == [model.lp.A.shape[1] - 1]


def test_model_counts_three_points():
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 1.0]])
    theta = make_theta(pts, (("zero",), ("W(1)",), ("Y(1)",)))
    inst = robust_eval.RobustInstance(theta, np.array([0.5, 0.5]), 1.0, 9.0)
    model = robust_eval.build_robust_milp(inst)
    assert len(model.groups["x"]) == 6
    assert len(model.groups["y"]) == 3


def test_model_counts_shipped():
    spec = shipped_spec()
    inst = robust_eval.instance_from_spec(spec, np.zeros(12))
    model = robust_eval.build_robust_milp(inst)
    assert len(model.groups["x"]) == 110
    assert len(model.groups["y"]) == 11
    ncont = model.lp.A.shape[1] - len(model.binary_variable_indices)
    # a (12) + s (11*12) + b, c, t + v (11)
    assert ncont == 12 * 12 + 3 + 11
    assert len(model.binary_variable_indices) == 121


def test_model_rows_bit_faithful():
    """Spot-check the documented big-M row structure."""
    pts = np.array([[0.0], [2.0], [1.0]])
    theta = make_theta(pts, (("zero",), ("W(1)",), ("Y(1)",)))
    M = 7.0
    inst = robust_eval.RobustInstance(theta, np.array([1.5]), 1.0, M)
    model = robust_eval.build_robust_milp(inst)
    lp = model.lp
    g = model.groups
    # epigraph: a X + b - t <= 0
    r = lp.A[0]
    assert r[g["a"][0]] == 1.5 and r[g["b"]] == 1.0 and r[g["t"]] == -1.0
    # first relaxed subgradient row, pair (0, 1): -s_0 (th1-th0) - v0 + v1 - M x <= 0
    r = lp.A[2]
    assert r[g["s"][0][0]] == -2.0
    assert r[g["v"][0]] == -1.0 and r[g["v"][1]] == 1.0
    assert r[g["x"][(0, 1)]] == -M and lp.b[2] == 0.0
    # its dominance partner: v1 - v0 + M x <= M
    r = lp.A[3]
    assert r[g["v"][0]] == -1.0 and r[g["v"][1]] == 1.0
    assert r[g["x"][(0, 1)]] == M and lp.b[3] == M
    # binaries bounded [0, 1]
    for j in model.binary_variable_indices:
        assert lp.lo[j] == 0.0 and lp.hi[j] == 1.0
    # b, c, t, v free
    for j in [g["b"], g["c"], g["t"], *g["v"]]:
        assert lp.lo[j] == -np.inf and lp.hi[j] == np.inf


def test_psi_zero_at_benchmark():
    spec = make_spec([([[2.0]], [[1.0]])], L=1.0, bench=[[0.7]])
    res = robust_eval.evaluate_psi(spec, Prospect(np.array([[0.7]])))
    assert abs(res.psi_value) <= 1e-9


def test_psi_zero_on_empty_spec():
    spec = AmbiguitySpec(one_scenario_space(), ())
    res = robust_eval.evaluate_psi(spec, Prospect(np.array([[0.0]])))
    assert res.psi_value == 0.0


def test_psi_one_dim_example_matches_oracle():
    spec = make_spec([([[2.0]], [[1.0]])], L=1.0)
    q = Prospect(np.array([[1.5]]))
    oracle = robust_eval.enumerate_oracle(spec, q)
    res = robust_eval.evaluate_psi(spec, q)
    assert abs(res.psi_value - oracle) <= 1e-6


def test_psi_monotone_in_query():
    rng = np.random.default_rng(5)
    spec, X = random_tiny_spec(rng)
    Z = Prospect(X.values + rng.uniform(0.0, 1.0, size=X.values.shape))
    rx = robust_eval.evaluate_psi(spec, X)
    rz = robust_eval.evaluate_psi(spec, Z)
    assert rx.psi_value <= rz.psi_value + 1e-6


def test_oracle_lp_count_two_points():
    # zero plus a benchmark: 2 points, 2 x-assignments^2 * 2 y-assignments^2
    spec = AmbiguitySpec(
        one_scenario_space(), (), 1.0, Prospect(np.array([[1.0]]))
    )
    _, lp_count, _ = robust_eval._enumerate_detail(spec, np.array([0.5]))
    assert lp_count == 16


def test_oracle_guard_refuses_large_sets():
    spec = shipped_spec()
    with pytest.raises(ValueError, match="20 binaries"):
        robust_eval.enumerate_oracle(spec, np.zeros(12))


def test_oracle_infeasible_kernel_detection():
    # doctored value box that no assignment can satisfy
    pts = np.zeros((1, 1))
    empty = np.empty(0, dtype=np.int64)
    best, lp_count, feas = robust_eval._enum_kernel(
        pts,
        np.array([0.5]),
        1.0,
        empty,
        empty,
        -1,
        np.array([1.0]),
        np.array([2.0]),
        0.1,
        -1.0,
        10.0,
        10_000,
    )
    assert lp_count == 2 and feas == 0


def test_oracle_all_infeasible_raises(monkeypatch):
    spec = make_spec([([[2.0]], [[1.0]])], L=1.0)
    monkeypatch.setattr(
        robust_eval, "_enum_kernel", lambda *a: (np.inf, 4, 0)
    )
    with pytest.raises(InconsistentDataError):
        robust_eval.enumerate_oracle(spec, np.array([0.0]))


def test_evaluate_psi_infeasible_root_raises(monkeypatch):
    class StubTab:
        def __init__(self, *a, **k):
            pass

        def solve(self):
            return "infeasible"

    monkeypatch.setattr(robust_eval, "TableauLP", StubTab)
    spec = make_spec([([[2.0]], [[1.0]])], L=1.0)
    with pytest.raises(InconsistentDataError):
        robust_eval.evaluate_psi(spec, np.array([0.0]))


def test_oracle_agreement_random_instances():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(40):
        spec, X = random_tiny_spec(rng)
        theta = core.build_theta(spec)
        nbin = theta.size * (theta.size - 1) + theta.size
        if nbin > 12:  # keep this unit test quick; big sweep in acceptance
            continue
        oracle = robust_eval.enumerate_oracle(spec, X)
        res = robust_eval.evaluate_psi(spec, X)
        assert abs(res.psi_value - oracle) <= 1e-6
        assert res.gap <= 1e-6
        checked += 1
    assert checked >= 10


def test_tighten_off_agrees():
    rng = np.random.default_rng(9)
    for _ in range(5):
        spec, X = random_tiny_spec(rng)
        a = robust_eval.evaluate_psi(spec, X, tighten=True)
        b = robust_eval.evaluate_psi(spec, X, tighten=False)
        assert abs(a.psi_value - b.psi_value) <= 1e-6


def test_bigM_scale_invariance():
    rng = np.random.default_rng(11)
    spec, X = random_tiny_spec(rng)
    theta = core.build_theta(spec)
    M = robust_eval.choose_bigM(theta, spec.lipschitz_L)
    a = robust_eval.evaluate_psi(spec, X)
    b = robust_eval.evaluate_psi(spec, X, bigM=10.0 * M)
    assert abs(a.psi_value - b.psi_value) <= 1e-6


def test_query_outside_support_range():
    # With no comparisons and only the zero anchor, the worst case at a
    # nonpositive query is -L * l1(negative part), attained by the stick
    # with unit slopes on every coordinate.  The default M must cover a
    # constant branch that deep even though the query lies outside the
    # range of the anchor set.
    ss = SampleSpace(("w1",), np.array([1.0]))
    spec = AmbiguitySpec(
        ss, pairs=(), lipschitz_L=1.0, benchmark=Prospect(np.zeros((2, 1)))
    )
    X = Prospect(np.array([[-1.0], [-0.5]]))
    res = robust_eval.evaluate_psi(spec, X)
    assert res.psi_value == pytest.approx(-1.5, abs=1e-9)
    assert np.allclose(res.support.a, [1.0, 1.0], atol=1e-9)
    val = robust_eval._enumerate_detail(spec, X)[0]
    assert val == pytest.approx(-1.5, abs=1e-9)


def test_bigM_query_awareness():
    # the default bound grows once the query leaves the anchor range,
    # and an explicitly oversized M agrees with the default
    ss = SampleSpace(("w1",), np.array([1.0]))
    spec = AmbiguitySpec(
        ss, pairs=(), lipschitz_L=1.0, benchmark=Prospect(np.zeros((2, 1)))
    )
    theta = core.build_theta(spec)
    base = robust_eval.choose_bigM(theta, 1.0)
    aware = robust_eval.choose_bigM(theta, 1.0, np.array([-1.0, -0.5]))
    assert aware > base
    X = Prospect(np.array([[-4.0], [-2.5]]))
    a = robust_eval.evaluate_psi(spec, X)
    b = robust_eval.evaluate_psi(spec, X, bigM=1e4)
    assert abs(a.psi_value - b.psi_value) <= 1e-8
    assert a.psi_value == pytest.approx(-6.5, abs=1e-9)


def test_redundant_dominated_pair_is_free():
    spec = shipped_spec()
    X = Prospect(spec.pairs[1].other.values * 0.8)
    base = robust_eval.evaluate_psi(spec, X).psi_value
    W = Prospect(spec.pairs[0].other.values + 3.0)
    extra = ComparisonPair(W, spec.pairs[0].other)
    spec2 = AmbiguitySpec(
        spec.sample_space, spec.pairs + (extra,), spec.lipschitz_L
    )
    again = robust_eval.evaluate_psi(spec2, X).psi_value
    assert abs(base - again) <= 1e-6


def test_lipschitz_homogeneity():
    rng = np.random.default_rng(13)
    space = one_scenario_space()
    W = Prospect(rng.uniform(-2, 2, size=(2, 1)))
    Y = Prospect(rng.uniform(-2, 2, size=(2, 1)))
    X = Prospect(rng.uniform(-2, 2, size=(2, 1)))
    a = robust_eval.evaluate_psi(
        AmbiguitySpec(space, (ComparisonPair(W, Y),), 0.7), X
    ).psi_value
    b = robust_eval.evaluate_psi(
        AmbiguitySpec(space, (ComparisonPair(W, Y),), 1.4), X
    ).psi_value
    assert abs(2.0 * a - b) <= 1e-6


def test_quasi_concavity_in_query():
    rng = np.random.default_rng(17)
    spec, X = random_tiny_spec(rng)
    Z = Prospect(rng.uniform(-2.5, 2.5, size=X.values.shape))
    lam = 0.35
    mid = Prospect(lam * X.values + (1 - lam) * Z.values)
    px = robust_eval.evaluate_psi(spec, X).psi_value
    pz = robust_eval.evaluate_psi(spec, Z).psi_value
    pm = robust_eval.evaluate_psi(spec, mid).psi_value
    assert pm >= min(px, pz) - 1e-6


def test_result_invariants():
    rng = np.random.default_rng(23)
    for _ in range(6):
        spec, X = random_tiny_spec(rng)
        theta = core.build_theta(spec)
        res = robust_eval.evaluate_psi(spec, X)
        L = spec.lipschitz_L
        pts = theta.points
        for i in range(theta.size):
            covered = max(
                float(res.support.a @ pts[i]) + res.support.b, res.support.c
            )
            assert covered >= res.values_v[i] - 1e-6
        assert np.all(res.support.a >= 0)
        assert res.support.a.max(initial=0.0) <= L + 1e-9
        assert np.all(res.subgradients_s >= 0)
        assert res.subgradients_s.max(initial=0.0) <= L + 1e-9
        assert abs(res.values_v[theta.zero_index]) <= 1e-9
        n_pairs = len(spec.pairs)
        for p in range(1, n_pairs + 1):
            wi = theta.role_index[f"W({p})"]
            yi = theta.role_index[f"Y({p})"]
            assert res.values_v[wi] >= res.values_v[yi] - 1e-9


def test_determinism():
    rng = np.random.default_rng(29)
    spec, X = random_tiny_spec(rng)
    a = robust_eval.evaluate_psi(spec, X)
    b = robust_eval.evaluate_psi(spec, X)
    assert a.psi_value == b.psi_value
    assert a.node_count == b.node_count
    assert a.values_v.tobytes() == b.values_v.tobytes()


def test_instance_validation():
    theta = make_theta(np.zeros((1, 2)), (("zero",),))
    with pytest.raises(ValueError):
        robust_eval.RobustInstance(theta, np.zeros(3), 1.0, 1.0)
    with pytest.raises(ValueError):
        robust_eval.RobustInstance(theta, np.zeros(2), -1.0, 1.0)
    with pytest.raises(ValueError):
        robust_eval.RobustInstance(theta, np.zeros(2), 1.0, 0.0)


def test_query_shape_errors():
    spec = make_spec([([[2.0]], [[1.0]])], L=1.0)
    with pytest.raises(ValueError):
        robust_eval.evaluate_psi(spec, Prospect(np.zeros((2, 1))))
    with pytest.raises(ValueError):
        robust_eval.evaluate_psi(spec, np.zeros(3))


# -- LP-file export -------------------------------------------------------

_TERM = _re.compile(r"([+-]?)\s*(?:(\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s+)?([A-Za-z_]\w*)")


def parse_lp_file(path):
    """Minimal reader for the exported LP text format."""
    sections = {}
    cur = None
    for raw in open(path, encoding="utf-8"):
        s = raw.strip()
        if not s or s.startswith("\\"):
            continue
        low = s.lower()
        if low in ("minimize", "maximize", "subject to", "bounds", "binaries", "end"):
            cur = low
            sections.setdefault(cur, [])
            continue
        sections[cur].append(s)
    names = []
    index = {}

    def touch(nm):
        if nm not in index:
            index[nm] = len(names)
            names.append(nm)

    def terms(expr):
        out = []
        for sign, coef, nm in _TERM.findall(expr):
            c = float(coef) if coef else 1.0
            if sign == "-":
                c = -c
            touch(nm)
            out.append((nm, c))
        return out

    obj_terms = terms(sections["minimize"][0].split(":", 1)[1])
    rows = []
    for line in sections["subject to"]:
        body = line.split(":", 1)[1]
        m = _re.search(r"(<=|>=|=)\s*([+-]?[\d.]+(?:[eE][+-]?\d+)?)\s*$", body)
        rows.append((terms(body[: m.start()]), m.group(1), float(m.group(2))))
    bound_specs = []
    for line in sections.get("bounds", []):
        if line.endswith(" free"):
            nm = line[:-5].strip()
            touch(nm)
            bound_specs.append((nm, -np.inf, np.inf))
            continue
        m = _re.match(
            r"([+-]?[\d.eE+-]+)\s*<=\s*(\w+)\s*<=\s*([+-]?[\d.eE+-]+)", line
        )
        if m:
            touch(m.group(2))
            bound_specs.append((m.group(2), float(m.group(1)), float(m.group(3))))
            continue
        m = _re.match(r"(\w+)\s*>=\s*([+-]?[\d.eE+-]+)", line)
        touch(m.group(1))
        bound_specs.append((m.group(1), float(m.group(2)), np.inf))
    binaries = []
    for line in sections.get("binaries", []):
        for nm in line.split():
            touch(nm)
            binaries.append(index[nm])
    nvar = len(names)
    lo = np.zeros(nvar)
    hi = np.full(nvar, np.inf)
    for nm, lov, hiv in bound_specs:
        lo[index[nm]], hi[index[nm]] = lov, hiv
    return names, index, obj_terms, rows, lo, hi, binaries


def scipy_milp_solve(path):
    from scipy.optimize import Bounds, LinearConstraint, milp

    names, index, obj_terms, rows, lo, hi, binaries = parse_lp_file(path)
    nvar = len(names)
    c = np.zeros(nvar)
    for nm, cv in obj_terms:
        c[index[nm]] += cv
    A = np.zeros((len(rows), nvar))
    lb = np.full(len(rows), -np.inf)
    ub = np.full(len(rows), np.inf)
    for i, (ts, rel, rhs) in enumerate(rows):
        for nm, cv in ts:
            A[i, index[nm]] += cv
        if rel == "<=":
            ub[i] = rhs
        elif rel == ">=":
            lb[i] = rhs
        else:
            lb[i] = ub[i] = rhs
    integrality = np.zeros(nvar)
    for j in binaries:
        integrality[j] = 1
        lo[j], hi[j] = 0.0, 1.0
    res = milp(
        c,
        constraints=LinearConstraint(A, lb, ub),
        bounds=Bounds(lo, hi),
        integrality=integrality,
        options={"mip_rel_gap": 1e-9},
    )
    assert res.status == 0, res.message
    return float(res.fun)


def test_export_single_point_binary_section(tmp_path):
    theta = make_theta(np.zeros((1, 1)), (("zero",),))
    inst = robust_eval.RobustInstance(theta, np.array([0.5]), 1.0, 1.0)
    model = robust_eval.build_robust_milp(inst)
    path = tmp_path / "tiny.lp"
    robust_eval.export_lp_file(model, path)
    _, _, _, rows, _, _, binaries = parse_lp_file(path)
    assert len(binaries) == 1
    assert len(rows) == model.lp.A.shape[0]


def test_export_round_trip_row_count(tmp_path):
    spec = shipped_spec()
    inst = robust_eval.instance_from_spec(spec, np.zeros(12))
    model = robust_eval.build_robust_milp(inst)
    path = tmp_path / "shipped.lp"
    robust_eval.export_lp_file(model, path)
    _, _, _, rows, _, _, binaries = parse_lp_file(path)
    assert len(rows) == model.lp.A.shape[0] == 250
    assert len(binaries) == 121


def test_export_external_solver_small(tmp_path):
    rng = np.random.default_rng(31)
    spec, X = random_tiny_spec(rng)
    inst = robust_eval.instance_from_spec(spec, X)
    model = robust_eval.build_robust_milp(inst)
    path = tmp_path / "small.lp"
    robust_eval.export_lp_file(model, path)
    external = scipy_milp_solve(path)
    ours = robust_eval.evaluate_psi(spec, X).psi_value
    assert abs(external - ours) <= 1e-5


def test_export_external_solver_shipped(tmp_path):
    spec = shipped_spec()
    X = Prospect(spec.pairs[2].other.values * 0.9)
    inst = robust_eval.instance_from_spec(spec, X)
    model = robust_eval.build_robust_milp(inst)
    path = tmp_path / "shipped.lp"
    robust_eval.export_lp_file(model, path)
    external = scipy_milp_solve(path)
    ours = robust_eval.evaluate_psi(spec, X).psi_value
    assert abs(external - ours) <= 1e-5
