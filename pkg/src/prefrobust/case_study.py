"""Budget-allocation study over ten cities and four loss attributes.

The module carries the shared data set (city loss table, per-city targets,
elicited comparison pairs), the exponential investment-effectiveness model
and its concave piecewise-linear surrogate, an expected-shortfall LP, the
worst-case allocation solver, a simulated decision maker, Monte Carlo
evaluation with CVaR and stochastic-dominance reporting, and four
experiment drivers that write CSV reports.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    AmbiguitySpec,
    ComparisonPair,
    Prospect,
    SampleSpace,
    parse_dataset,
)
from .lp import LinearProgram, solve_lp
from .optimizer import (
    ConcaveMap,
    DecisionProblem,
    PiecewiseTerm,
    PLFMTrace,
    run_plfm,
)
from .robust_eval import evaluate_psi

_DATA_DIR = Path(__file__).parent / "data"

ATTRIBUTES = ("property", "fatalities", "air_departures", "bridge_traffic")
SCENARIOS = ("standard", "reduced", "increased")
DEFAULT_BREAKPOINTS = (5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 75.0, 100.0, 150.0, 200.0)
DEFAULT_WEIGHTS = (0.5, 0.5, 0.5, 0.5)
DEFAULT_KAPPA = 0.05
DEFAULT_LIPSCHITZ = 1.0 / 12.0


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class LossModel:
    """City loss data: direct losses for property and fatalities, daily
    incident averages for air departures and bridge traffic.

    direct is (2, cities, scenarios) in million USD; daily_averages is
    (2, cities) in incidents per day. Scenario losses for the derived
    attributes come from derive_random_losses.
    """

    cities: tuple
    direct: np.ndarray
    daily_averages: np.ndarray
    gamma: float = 1.1
    unit_costs: tuple = (500.0, 300.0)
    probabilities: Optional[np.ndarray] = None

    def __post_init__(self):
        cities = tuple(self.cities)
        direct = np.array(self.direct, dtype=float)
        daily = np.array(self.daily_averages, dtype=float)
        m = len(cities)
        if direct.shape != (2, m, 3):
            raise ValueError("direct losses must be (2, cities, 3)")
        if daily.shape != (2, m):
            raise ValueError("daily averages must be (2, cities)")
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if len(self.unit_costs) != 2 or any(c <= 0 for c in self.unit_costs):
            raise ValueError("need two positive per-incident costs")
        probs = (
            np.full(3, 1.0 / 3.0)
            if self.probabilities is None
            else np.asarray(self.probabilities, dtype=float)
        )
        if probs.shape != (3,) or abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ValueError("need three scenario probabilities summing to 1")
        for arr in (direct, daily, probs):
            arr.setflags(write=False)
        object.__setattr__(self, "cities", cities)
        object.__setattr__(self, "direct", direct)
        object.__setattr__(self, "daily_averages", daily)
        object.__setattr__(self, "unit_costs", tuple(self.unit_costs))
        object.__setattr__(self, "probabilities", probs)

    @property
    def n_cities(self) -> int:
        return len(self.cities)

    def loss_table(self) -> np.ndarray:
        """(attribute, city, scenario) losses in million USD."""
        m = self.n_cities
        out = np.empty((4, m, 3))
        out[0] = self.direct[0]
        out[1] = self.direct[1]
        for a in range(2):
            c = self.unit_costs[a]
            for j in range(m):
                out[2 + a, j] = derive_random_losses(
                    self.daily_averages[a, j], self.gamma, c
                )
        return out

    def max_targets(self) -> np.ndarray:
        """Per-cell worst scenario loss, the default aspiration level."""
        return self.loss_table().max(axis=2)


def derive_random_losses(t_bar: float, gamma: float, c: float) -> np.ndarray:
    """Scenario losses (standard, reduced, increased) in million USD for a
    daily-average attribute.

    The log-uniform incident count is gamma^U scaled so its mean equals
    t_bar; standard maps to U=-1, reduced to U=0, increased to U=+1.
    The label-to-exponent mapping is fixed by the published loss table.
    """
    if gamma <= 1.0:
        raise ValueError("gamma must exceed 1")
    if t_bar <= 0 or c <= 0:
        raise ValueError("t_bar and c must be positive")
    base = 2.0 * gamma * t_bar * math.log(gamma) / (gamma * gamma - 1.0)
    return np.array(
        [c * base / gamma, c * base, c * base * gamma], dtype=float
    ) / 1e6


def load_loss_model(path=None) -> LossModel:
    """Read the shipped city table (or a CSV in the same 9-column layout)."""
    p = Path(path) if path is not None else _DATA_DIR / "table1.csv"
    cities = []
    direct = []
    daily = []
    with open(p, newline="") as fh:
        for row in csv.DictReader(fh):
            cities.append(row["city"])
            direct.append(
                [
                    [
                        float(row[f"property_{s}"]) for s in SCENARIOS
                    ],
                    [
                        float(row[f"fatalities_{s}"]) for s in SCENARIOS
                    ],
                ]
            )
            daily.append([float(row["air_daily_avg"]), float(row["bridge_daily_avg"])])
    arr = np.array(direct)  # (cities, 2, 3)
    return LossModel(
        tuple(cities), arr.transpose(1, 0, 2), np.array(daily).T
    )


def load_city_targets(path=None) -> dict:
    """City name -> target (million USD) from the per-city target table."""
    p = Path(path) if path is not None else _DATA_DIR / "table3.csv"
    out = {}
    with open(p, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["city"]] = float(row["target"])
    return out


def load_appendix_pairs(path=None, lipschitz_L: float = DEFAULT_LIPSCHITZ) -> AmbiguitySpec:
    """The five shipped comparison pairs as an ambiguity specification."""
    p = Path(path) if path is not None else _DATA_DIR / "appendixB.json"
    return parse_dataset(p.read_text(), lipschitz_L=lipschitz_L)


def make_targets(lm: LossModel, mode: str = "max", table_path=None) -> np.ndarray:
    """Target matrix v (attribute, city).

    mode "max" takes each cell's worst scenario loss; mode "table3" applies
    the shipped per-city aspiration uniformly across that city's attributes.
    """
    if mode == "max":
        return lm.max_targets()
    if mode == "table3":
        per_city = load_city_targets(table_path)
        try:
            vec = np.array([per_city[c] for c in lm.cities], dtype=float)
        except KeyError as e:
            raise ValueError(f"no target for city {e.args[0]!r}") from None
        return np.tile(vec, (4, 1))
    raise ValueError("targets mode must be 'max' or 'table3'")


# ---------------------------------------------------------------------------
# effectiveness of investment


def effectiveness(z, v, delta):
    """Exact saturating investment effect v*(1 - exp(-delta*z))."""
    return v * (1.0 - np.exp(-delta * np.asarray(z, dtype=float)))


def piecewise_linearize(v: float, delta: float, breakpoints=DEFAULT_BREAKPOINTS):
    """Concave tangent surrogate of the effectiveness curve.

    Returns (slopes, intercepts) for the min-of-affine form, one tangent per
    breakpoint. Tangents of a concave curve dominate it everywhere, so the
    surrogate is exact at the support points and an over-estimate between
    them. The study models investment effect through this surrogate; the
    exact curve only supplies the tangent data.
    """
    if delta <= 0 or delta > 1:
        raise ValueError("delta must lie in (0, 1]")
    if v < 0:
        raise ValueError("target must be nonnegative")
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or bp.size < 1 or np.any(np.diff(bp) <= 0) or bp[0] <= 0:
        raise ValueError("breakpoints must be positive and increasing")
    ys = effectiveness(bp, v, delta)
    slopes = v * delta * np.exp(-delta * bp)
    intercepts = ys - slopes * bp
    return slopes, intercepts


def linearized_value(z, slopes, intercepts):
    z = np.asarray(z, dtype=float)
    return np.min(np.multiply.outer(z, slopes) + intercepts, axis=-1)


# ---------------------------------------------------------------------------
# allocation problems


@dataclass(frozen=True)
class AllocationProblem:
    """Budget, effectiveness and target data for one allocation instance."""

    targets: np.ndarray
    budget: float = 400.0
    delta: float = 0.05
    breakpoints: tuple = DEFAULT_BREAKPOINTS
    lower_bound: float = 1.0
    lipschitz_L: float = DEFAULT_LIPSCHITZ
    ambiguity: Optional[AmbiguitySpec] = None

    def __post_init__(self):
        targets = np.array(self.targets, dtype=float)
        if targets.ndim != 2 or targets.shape[0] != 4:
            raise ValueError("targets must be (4, cities)")
        if np.any(targets < 0):
            raise ValueError("targets must be nonnegative")
        if self.delta <= 0 or self.delta > 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.lower_bound < 0:
            raise ValueError("lower bound must be nonnegative")
        targets.setflags(write=False)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "breakpoints", tuple(self.breakpoints))

    @property
    def n_cities(self) -> int:
        return self.targets.shape[1]

    @property
    def n_cells(self) -> int:
        return self.targets.size

    def check_budget(self):
        if self.budget < self.n_cells * self.lower_bound:
            raise ValueError(
                "budget cannot cover the per-cell lower bound"
            )

    def cell_pieces(self, i: int, j: int):
        return piecewise_linearize(
            float(self.targets[i, j]), self.delta, self.breakpoints
        )


def _surrogate_effect(z, lm: LossModel, ap: AllocationProblem) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(4, lm.n_cities)
    g = np.empty_like(z)
    for i in range(4):
        for j in range(lm.n_cities):
            slopes, intercepts = ap.cell_pieces(i, j)
            g[i, j] = float(np.min(slopes * z[i, j] + intercepts))
    return g


def shortfall_map(z, lm: LossModel, ap: AllocationProblem) -> Prospect:
    """Reward prospect -C(z): per attribute and scenario, the negated sum
    over cities of target shortfall under the surrogate investment effect."""
    table = lm.loss_table()
    g = _surrogate_effect(z, lm, ap)
    short = np.clip(table - g[:, :, None], 0.0, None)
    return Prospect(-short.sum(axis=1), ATTRIBUTES)


def expected_loss(z, lm: LossModel, ap: AllocationProblem) -> float:
    """Expected total shortfall at z under the surrogate investment effect."""
    rewards = shortfall_map(z, lm, ap).values
    return float(-(rewards @ lm.probabilities).sum())


def decision_reward_map(lm: LossModel, ap: AllocationProblem) -> ConcaveMap:
    """Concave decision-to-reward map using the chordal surrogate.

    Component (attribute i, scenario s) sums over cities j the term
    min(0, surrogate_ij(z_ij) - loss_ijs), each a min-of-affine piece set
    over the flat decision vector.
    """
    m = lm.n_cities
    table = lm.loss_table()
    terms = []
    pieces = [[ap.cell_pieces(i, j) for j in range(m)] for i in range(4)]
    for i in range(4):
        for s in range(3):
            comp = []
            for j in range(m):
                slopes, intercepts = pieces[i][j]
                rows = np.zeros((slopes.size + 1, 4 * m))
                rows[: slopes.size, i * m + j] = slopes
                consts = np.append(intercepts - table[i, j, s], 0.0)
                comp.append(PiecewiseTerm(rows, consts))
            terms.append(tuple(comp))
    return ConcaveMap(tuple(terms), 4, 3)


@dataclass(frozen=True)
class NeutralSolution:
    allocation: np.ndarray
    expected_loss: float


def solve_risk_neutral(ap: AllocationProblem, lm: LossModel) -> NeutralSolution:
    """Expected-shortfall LP over allocations and per-cell epigraph slacks.

    One slack per (attribute, city, scenario) dominates the shortfall under
    every surrogate piece; the objective weights slacks by the scenario
    probabilities.
    """
    ap.check_budget()
    m = lm.n_cities
    table = lm.loss_table()
    nz = 4 * m
    ny = nz * 3
    ncol = nz + ny

    def ycol(i, j, s):
        return nz + (i * m + j) * 3 + s

    c = np.zeros(ncol)
    rows = []
    for i in range(4):
        for j in range(m):
            slopes, intercepts = ap.cell_pieces(i, j)
            for s in range(3):
                c[ycol(i, j, s)] = lm.probabilities[s]
                for p in range(slopes.size):
                    r = np.zeros(ncol)
                    r[ycol(i, j, s)] = 1.0
                    r[i * m + j] = slopes[p]
                    rows.append((r, ">=", table[i, j, s] - intercepts[p]))
    budget_row = np.zeros(ncol)
    budget_row[:nz] = 1.0
    rows.append((budget_row, "<=", ap.budget))
    lo = np.zeros(ncol)
    lo[:nz] = ap.lower_bound
    sol = solve_lp(LinearProgram.build(c, rows, lo=lo, hi=None, sense="min"))
    if sol.status != "optimal":
        raise RuntimeError(f"risk-neutral LP {sol.status}")
    return NeutralSolution(sol.x[:nz].reshape(4, m).copy(), float(sol.objective))


def build_decision_problem(lm: LossModel, ap: AllocationProblem) -> DecisionProblem:
    """Feasible-allocation polytope with the surrogate reward map attached."""
    if ap.ambiguity is None:
        raise ValueError("allocation problem carries no ambiguity data")
    ap.check_budget()
    nz = 4 * lm.n_cities
    budget_row = (np.ones(nz), "<=", ap.budget)
    return DecisionProblem(
        rows=(budget_row,),
        lo=np.full(nz, ap.lower_bound),
        hi=None,
        gmap=decision_reward_map(lm, ap),
        ambiguity=ap.ambiguity,
    )


@dataclass(frozen=True)
class RobustSolution:
    allocation: np.ndarray
    psi_value: float
    trace: PLFMTrace


def solve_robust(
    ap: AllocationProblem,
    lm: LossModel,
    lam: float = 0.8,
    eps: float = 1e-4,
    max_iter: int = 200,
    z0=None,
    **solver_kwargs,
) -> RobustSolution:
    """Maximize the worst-case reward ranking over feasible allocations.

    The study drivers warm-start at the risk-neutral allocation; the level
    method still has to close its optimality gap from the collected level
    functions, so the start point changes speed, not the certificate.
    """
    dp = build_decision_problem(lm, ap)
    trace = run_plfm(dp, lam=lam, eps=eps, max_iter=max_iter, z0=z0, **solver_kwargs)
    if trace.incumbent_z is None:
        raise RuntimeError("level method produced no iterate")
    alloc = trace.incumbent_z.reshape(4, lm.n_cities).copy()
    return RobustSolution(alloc, trace.incumbent_psi, trace)


# ---------------------------------------------------------------------------
# simulated decision maker


def mce_oracle(w, kappa: float, X) -> float:
    """Exponential-utility certainty equivalent of the scalarized reward.

    Rewards are scalarized per scenario by the weight vector; the certainty
    equivalent uses u(y) = -exp(-kappa*y). Increasing and concave in the
    prospect, and zero on the zero prospect.
    """
    w = np.asarray(w, dtype=float)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if np.any(w < 0) or abs(float(w @ w) - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative with unit 2-norm")
    if isinstance(X, Prospect):
        values = X.values
        probs = np.full(values.shape[1], 1.0 / values.shape[1])
    else:
        values = np.atleast_2d(np.asarray(X, dtype=float))
        probs = np.full(values.shape[1], 1.0 / values.shape[1])
    if w.shape != (values.shape[0],):
        raise ValueError("weight length must match the attribute count")
    s = w @ values
    # log-sum-exp keeps the certainty equivalent finite for large losses
    t = -kappa * s + np.log(probs)
    mx = float(t.max())
    return -(mx + math.log(float(np.exp(t - mx).sum()))) / kappa


def scenario_mce_oracle(w, kappa, X, probabilities) -> float:
    """mce_oracle with explicit scenario probabilities."""
    w = np.asarray(w, dtype=float)
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    values = X.values if isinstance(X, Prospect) else np.atleast_2d(np.asarray(X, float))
    s = w @ values
    t = -kappa * s + np.log(np.asarray(probabilities, dtype=float))
    mx = float(t.max())
    return -(mx + math.log(float(np.exp(t - mx).sum()))) / kappa


def default_oracle(w=None, kappa: float = DEFAULT_KAPPA) -> Callable:
    wv = np.asarray(DEFAULT_WEIGHTS if w is None else w, dtype=float)
    return lambda X: mce_oracle(wv, kappa, X)


def generate_elicitation(
    oracle: Optional[Callable],
    n_pairs: int,
    rng_seed,
    lipschitz_L: float = DEFAULT_LIPSCHITZ,
) -> AmbiguitySpec:
    """Synthetic comparison data: pairs of uniform[-1000, 0] prospects
    ordered by the oracle, over three equally likely scenarios."""
    if n_pairs < 1:
        raise ValueError("need at least one pair")
    if oracle is None:
        oracle = default_oracle()
    rng = np.random.default_rng(rng_seed)
    space = SampleSpace(("I", "II", "III"), np.full(3, 1.0 / 3.0))
    pairs = []
    for _ in range(n_pairs):
        a = Prospect(rng.uniform(-1000.0, 0.0, size=(4, 3)), ATTRIBUTES)
        b = Prospect(rng.uniform(-1000.0, 0.0, size=(4, 3)), ATTRIBUTES)
        if oracle(a) >= oracle(b):
            pairs.append(ComparisonPair(a, b))
        else:
            pairs.append(ComparisonPair(b, a))
    return AmbiguitySpec(space, tuple(pairs), lipschitz_L, None)


# ---------------------------------------------------------------------------
# Monte Carlo evaluation


def empirical_cvar(samples, alpha: float) -> float:
    """Upper-tail conditional value at risk of loss samples.

    Exact discrete optimum of eta + mean((x - eta)+)/alpha at the empirical
    quantile: with n*alpha of tail mass, eta is the ceil(alpha*n)-th largest
    sample.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    n = x.size
    k = math.ceil(alpha * n)
    eta = float(np.partition(x, n - k)[n - k])
    excess = np.clip(x - eta, 0.0, None).sum()
    return eta + float(excess) / (alpha * n)


@dataclass(frozen=True)
class SimulationReport:
    sample_count: int
    seed: int
    mean: float
    variance: float
    cvar_10: float
    cvar_5: float
    sorted_losses: np.ndarray
    ssd_profile: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.sorted_losses, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "sorted_losses", x)
        if self.cvar_5 < self.cvar_10 - 1e-9 or self.cvar_10 < self.mean - 1e-9:
            raise ValueError("tail ordering violated")


def simulate(
    allocation,
    lm: LossModel,
    ap: AllocationProblem,
    n_samples: int = 1000,
    seed: int = 1,
    scheme: str = "per_cell",
) -> SimulationReport:
    """Monte Carlo loss distribution of an allocation.

    Each city-attribute cell draws its own scenario independently by
    default. scheme "per_attribute" shares one draw across the cities of
    each attribute; "joint" shares a single draw across everything.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    table = lm.loss_table()
    g = _surrogate_effect(allocation, lm, ap)
    cell_short = np.clip(table - g[:, :, None], 0.0, None)
    rng = np.random.default_rng(seed)
    p = lm.probabilities
    m = lm.n_cities
    if scheme == "per_cell":
        draws = rng.choice(3, size=(n_samples, 4, m), p=p)
        flat = cell_short.reshape(4 * m, 3)
        totals = flat[np.arange(4 * m)[None, :], draws.reshape(n_samples, 4 * m)].sum(
            axis=1
        )
    elif scheme == "per_attribute":
        per_scenario = cell_short.sum(axis=1)
        draws = rng.choice(3, size=(n_samples, 4), p=p)
        totals = per_scenario[np.arange(4)[None, :], draws].sum(axis=1)
    elif scheme == "joint":
        per_scenario = cell_short.sum(axis=(0, 1))
        draws = rng.choice(3, size=n_samples, p=p)
        totals = per_scenario[draws]
    else:
        raise ValueError("scheme must be per_cell, per_attribute or joint")
    totals = np.sort(totals)
    mean = float(totals.mean())
    variance = float(totals.var(ddof=1)) if n_samples > 1 else 0.0
    return SimulationReport(
        sample_count=n_samples,
        seed=seed,
        mean=mean,
        variance=variance,
        cvar_10=empirical_cvar(totals, 0.10),
        cvar_5=empirical_cvar(totals, 0.05),
        sorted_losses=totals,
    )


# ---------------------------------------------------------------------------
# stochastic dominance


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _Phi(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


def _normal_cdf_integral(x, mu, sd):
    """Closed form of the CDF primitive: integral of Phi((t-mu)/sd) dt up
    to x equals sd*(z*Phi(z) + phi(z)) at z = (x-mu)/sd."""
    z = (np.asarray(x, dtype=float) - mu) / sd
    return sd * (z * _Phi(z) + _phi(z))


@dataclass(frozen=True)
class SSDReport:
    grid: np.ndarray
    profile_empirical: np.ndarray
    min_empirical: float
    holds_empirical: bool
    normal_params: tuple
    profile_normal: np.ndarray
    min_normal: float
    holds_normal: bool


def ssd_check(samples_R, samples_N) -> SSDReport:
    """Integrated-CDF dominance of distribution R over distribution N.

    The profile x -> integral up to x of (F_N - F_R) must stay nonnegative
    for R to dominate. Reported for the empirical CDFs on the merged sample
    grid and for moment-matched normal fits; the normal-fit minimum is
    computed exactly from the single CDF crossing.
    """
    r = np.sort(np.asarray(samples_R, dtype=float).ravel())
    n = np.sort(np.asarray(samples_N, dtype=float).ravel())
    if r.size == 0 or n.size == 0:
        raise ValueError("need samples on both sides")
    grid = np.unique(np.concatenate([r, n]))
    fr = np.searchsorted(r, grid, side="right") / r.size
    fn = np.searchsorted(n, grid, side="right") / n.size
    profile = np.zeros(grid.size)
    if grid.size > 1:
        seg = np.diff(grid) * (fn[:-1] - fr[:-1])
        profile[1:] = np.cumsum(seg)
    min_emp = float(profile.min())

    mu_r, mu_n = float(r.mean()), float(n.mean())
    sd_r = float(r.std(ddof=1)) if r.size > 1 else 0.0
    sd_n = float(n.std(ddof=1)) if n.size > 1 else 0.0
    cands = [0.0, mu_r - mu_n]
    lo = min(grid[0], mu_r - 4 * max(sd_r, 1e-12), mu_n - 4 * max(sd_n, 1e-12))
    hi = max(grid[-1], mu_r + 4 * max(sd_r, 1e-12), mu_n + 4 * max(sd_n, 1e-12))
    dense = np.linspace(lo, hi, 513)
    if sd_r > 1e-12 and sd_n > 1e-12:
        prof_norm = _normal_cdf_integral(dense, mu_n, sd_n) - _normal_cdf_integral(
            dense, mu_r, sd_r
        )
        if abs(sd_n - sd_r) > 1e-12:
            # the two normal CDFs cross exactly once, at equal z-scores
            x_star = (mu_r * sd_n - mu_n * sd_r) / (sd_n - sd_r)
            cands.append(
                float(
                    _normal_cdf_integral(x_star, mu_n, sd_n)
                    - _normal_cdf_integral(x_star, mu_r, sd_r)
                )
            )
    else:
        # a degenerate fit reduces to a step CDF; fall back to the grid
        prof_norm = np.interp(dense, grid, profile)
        cands.append(float(prof_norm.min()))
    min_norm = float(min(cands))
    return SSDReport(
        grid=grid,
        profile_empirical=profile,
        min_empirical=min_emp,
        holds_empirical=min_emp >= -1e-9,
        normal_params=((mu_r, sd_r), (mu_n, sd_n)),
        profile_normal=prof_norm,
        min_normal=min_norm,
        holds_normal=min_norm >= -1e-9,
    )


# ---------------------------------------------------------------------------
# experiment drivers


@dataclass
class StudyConfig:
    """Settings shared by the experiment drivers; defaults reproduce the
    published desk-scale study."""

    out_dir: Path = Path("reports")
    seed: int = 1
    samples: int = 1000
    budget: float = 400.0
    delta: float = 0.05
    targets_mode: str = "table3"
    kappa: float = DEFAULT_KAPPA
    weights: tuple = DEFAULT_WEIGHTS
    lipschitz_L: float = DEFAULT_LIPSCHITZ
    lam: float = 0.8
    eps: float = 1e-4
    plfm_max_iter: int = 200
    delta_grid: tuple = (0.01, 0.02, 0.04, 0.05, 0.1, 0.2, 0.5, 0.8)
    pair_grid: tuple = (1, 3, 5)
    replicates: int = 20
    elicited_pairs: int = 100
    test_pairs: int = 20
    size_grid: tuple = (1, 2, 3, 4, 5, 6, 10, 15, 20, 25, 30, 35, 40, 45, 50, 60, 75, 100)
    timing_sizes: tuple = (1, 2, 4, 6, 8, 10)
    timing_repeats: int = 3
    jobs: int = 1

    def problem(self, lm: LossModel, with_ambiguity: bool = False) -> AllocationProblem:
        targets = make_targets(lm, self.targets_mode)
        amb = load_appendix_pairs(lipschitz_L=self.lipschitz_L) if with_ambiguity else None
        return AllocationProblem(
            targets=targets,
            budget=self.budget,
            delta=self.delta,
            lipschitz_L=self.lipschitz_L,
            ambiguity=amb,
        )


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_series(path: Path, xs, ys):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{_fmt(x)} {_fmt(y)}" for x, y in zip(xs, ys)]
    path.write_text("\n".join(lines) + "\n")


def _write_meta(cfg: StudyConfig, which: str):
    from . import __version__

    meta = {k: (str(v) if isinstance(v, Path) else v) for k, v in asdict(cfg).items()}
    meta["experiment"] = which
    meta["version"] = __version__
    path = Path(cfg.out_dir) / "meta.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def _allocation_rows(lm: LossModel, allocation: np.ndarray):
    rows = []
    for j, city in enumerate(lm.cities):
        rows.append([city] + [allocation[i, j] for i in range(4)])
    return rows


def _write_allocation(out: Path, name: str, lm: LossModel, allocation: np.ndarray):
    _write_csv(
        out / f"allocation_{name}.csv",
        ["city"] + list(ATTRIBUTES),
        _allocation_rows(lm, allocation),
    )


def _write_simulation(out: Path, name: str, rep: SimulationReport):
    _write_csv(
        out / f"simulation_{name}.csv",
        ["samples", "seed", "mean", "variance", "cvar_10", "cvar_5"],
        [[rep.sample_count, rep.seed, rep.mean, rep.variance, rep.cvar_10, rep.cvar_5]],
    )


def _experiment_I(cfg: StudyConfig) -> dict:
    out = Path(cfg.out_dir)
    lm = load_loss_model()
    ap = cfg.problem(lm, with_ambiguity=True)
    neutral = solve_risk_neutral(ap, lm)
    robust = solve_robust(
        ap,
        lm,
        lam=cfg.lam,
        eps=cfg.eps,
        max_iter=cfg.plfm_max_iter,
        z0=neutral.allocation.ravel(),
    )
    sim_n = simulate(neutral.allocation, lm, ap, cfg.samples, cfg.seed)
    sim_r = simulate(robust.allocation, lm, ap, cfg.samples, cfg.seed)
    ssd = ssd_check(sim_r.sorted_losses, sim_n.sorted_losses)
    sim_r = replace(sim_r, ssd_profile=ssd.profile_empirical)

    _write_allocation(out, "risk_neutral", lm, neutral.allocation)
    _write_allocation(out, "robust", lm, robust.allocation)
    _write_simulation(out, "risk_neutral", sim_n)
    _write_simulation(out, "robust", sim_r)
    _write_csv(
        out / "experiment_I.csv",
        ["model", "mean", "variance", "cvar_10", "cvar_5", "objective"],
        [
            ["risk_neutral", sim_n.mean, sim_n.variance, sim_n.cvar_10, sim_n.cvar_5, neutral.expected_loss],
            ["robust", sim_r.mean, sim_r.variance, sim_r.cvar_10, sim_r.cvar_5, robust.psi_value],
        ],
    )
    _write_csv(
        out / "ssd_report.csv",
        ["fit", "min_profile", "holds"],
        [
            ["empirical", ssd.min_empirical, str(ssd.holds_empirical)],
            ["normal", ssd.min_normal, str(ssd.holds_normal)],
        ],
    )
    for name, rep in (("risk_neutral", sim_n), ("robust", sim_r)):
        xs = rep.sorted_losses
        ys = (np.arange(xs.size) + 1) / xs.size
        _write_series(out / "plots" / f"cdf_{name}.txt", xs, ys)
    _write_series(out / "plots" / "ssd_profile.txt", ssd.grid, ssd.profile_empirical)
    _write_csv(
        out / "plfm_trace.csv",
        ["iteration", "psi", "delta"],
        [[r.index, r.psi, r.delta] for r in robust.trace.records],
    )
    _write_meta(cfg, "I")
    return {
        "neutral": neutral,
        "robust": robust,
        "sim_neutral": sim_n,
        "sim_robust": sim_r,
        "ssd": ssd,
    }


def _replicate_solve(args):
    """Worker for the dataset-sensitivity study; builds everything from its
    arguments so results do not depend on worker count or order."""
    (seed_key, n_pairs, budget, delta, targets_mode, lipschitz_L, lam, eps, max_iter) = args
    lm = load_loss_model()
    spec = generate_elicitation(None, n_pairs, seed_key, lipschitz_L)
    ap = AllocationProblem(
        targets=make_targets(lm, targets_mode),
        budget=budget,
        delta=delta,
        lipschitz_L=lipschitz_L,
        ambiguity=spec,
    )
    warm = solve_risk_neutral(ap, lm).allocation.ravel()
    sol = solve_robust(ap, lm, lam=lam, eps=eps, max_iter=max_iter, z0=warm)
    return sol.allocation, expected_loss(sol.allocation, lm, ap)


def _experiment_II(cfg: StudyConfig) -> dict:
    out = Path(cfg.out_dir)
    lm = load_loss_model()
    sweep = []
    for d in cfg.delta_grid:
        ap = AllocationProblem(
            targets=make_targets(lm, cfg.targets_mode),
            budget=cfg.budget,
            delta=float(d),
            lipschitz_L=cfg.lipschitz_L,
        )
        sol = solve_risk_neutral(ap, lm)
        sweep.append((float(d), sol.expected_loss))
    _write_csv(out / "experiment_II.csv", ["delta", "expected_loss"], sweep)
    _write_series(out / "plots" / "delta_sweep.txt", [d for d, _ in sweep], [v for _, v in sweep])

    tasks = []
    for n_pairs in cfg.pair_grid:
        for r in range(cfg.replicates):
            tasks.append(
                (
                    (cfg.seed, 101, int(n_pairs), r),
                    int(n_pairs),
                    cfg.budget,
                    cfg.delta,
                    cfg.targets_mode,
                    cfg.lipschitz_L,
                    cfg.lam,
                    cfg.eps,
                    cfg.plfm_max_iter,
                )
            )
    if cfg.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_replicate_solve, tasks))
    else:
        results = [_replicate_solve(t) for t in tasks]
    variance_rows = []
    idx = 0
    for n_pairs in cfg.pair_grid:
        allocs = []
        losses = []
        for _ in range(cfg.replicates):
            alloc, loss = results[idx]
            idx += 1
            allocs.append(np.asarray(alloc).ravel())
            losses.append(loss)
        a = np.array(allocs)
        alloc_var = float(a.var(axis=0, ddof=1).sum()) if len(allocs) > 1 else 0.0
        loss_var = float(np.var(losses, ddof=1)) if len(losses) > 1 else 0.0
        variance_rows.append((int(n_pairs), alloc_var, loss_var))
    _write_csv(
        out / "experiment_II_variance.csv",
        ["n_pairs", "allocation_variance", "loss_variance"],
        variance_rows,
    )
    _write_meta(cfg, "II")
    return {"sweep": sweep, "variance": variance_rows}


def count_violated_orders(
    elicited: AmbiguitySpec,
    test_pairs: Sequence[ComparisonPair],
    n_pairs: int,
    tighten_limit: int = 45,
    **solver_kwargs,
) -> int:
    """Held-out disagreements for the ambiguity set cut to the first
    n_pairs comparisons.

    A test pair counts as violated when the worst-case excess of its
    preferred prospect over the other is strictly negative, meaning the
    elicited set cannot certify the stated preference.
    """
    sub = AmbiguitySpec(
        elicited.sample_space,
        elicited.pairs[:n_pairs],
        elicited.lipschitz_L,
        None,
    )
    count = 0
    for pair in test_pairs:
        spec = AmbiguitySpec(
            sub.sample_space, sub.pairs, sub.lipschitz_L, pair.other
        )
        anchors = 2 * n_pairs + 2
        res = evaluate_psi(
            spec,
            pair.preferred,
            tighten=anchors <= tighten_limit,
            **solver_kwargs,
        )
        if res.psi_value < -1e-9:
            count += 1
    return count


def _experiment_III(cfg: StudyConfig) -> dict:
    out = Path(cfg.out_dir)
    oracle = default_oracle(cfg.weights, cfg.kappa)
    elicited = generate_elicitation(
        oracle, cfg.elicited_pairs, (cfg.seed, 31), cfg.lipschitz_L
    )
    test = generate_elicitation(
        oracle, cfg.test_pairs, (cfg.seed, 37), cfg.lipschitz_L
    )
    rows = []
    for size in cfg.size_grid:
        if size > len(elicited.pairs):
            raise ValueError("size grid exceeds the elicited pair count")
        violated = count_violated_orders(elicited, test.pairs, int(size))
        rows.append((int(size), violated, len(test.pairs)))
    _write_csv(out / "experiment_III.csv", ["n_pairs", "violated", "test_pairs"], rows)
    _write_series(
        out / "plots" / "violated_orders.txt",
        [r[0] for r in rows],
        [r[1] for r in rows],
    )
    _write_meta(cfg, "III")
    return {"counts": rows}


def _experiment_IV(cfg: StudyConfig) -> dict:
    out = Path(cfg.out_dir)
    oracle = default_oracle(cfg.weights, cfg.kappa)
    most = generate_elicitation(
        oracle, max(cfg.timing_sizes), (cfg.seed, 41), cfg.lipschitz_L
    )
    rng = np.random.default_rng((cfg.seed, 43))
    query = Prospect(rng.uniform(-1000.0, 0.0, size=(4, 3)), ATTRIBUTES)
    rows = []
    for size in cfg.timing_sizes:
        spec = AmbiguitySpec(
            most.sample_space, most.pairs[: int(size)], most.lipschitz_L, None
        )
        times = []
        nodes = 0
        for _ in range(cfg.timing_repeats):
            t0 = time.perf_counter()
            res = evaluate_psi(spec, query)
            times.append(time.perf_counter() - t0)
            nodes = res.node_count
        rows.append((int(size), float(np.median(times)), nodes))
    _write_csv(out / "experiment_IV.csv", ["n_pairs", "seconds", "nodes"], rows)
    _write_series(
        out / "plots" / "runtime.txt", [r[0] for r in rows], [r[1] for r in rows]
    )
    _write_meta(cfg, "IV")
    return {"timings": rows}


def run_experiment(which: str, config: Optional[StudyConfig] = None) -> dict:
    """Run one of the four studies and write its report files."""
    cfg = config if config is not None else StudyConfig()
    dispatch = {
        "I": _experiment_I,
        "II": _experiment_II,
        "III": _experiment_III,
        "IV": _experiment_IV,
    }
    key = str(which).strip().upper()
    if key not in dispatch:
        raise ValueError("experiment must be one of I, II, III, IV")
    return dispatch[key](cfg)
