"""Packaged cross-checks binding the analytic model and the simulator.

Every suite returns a :class:`SuiteReport` of named checks, so that the
acceptance tests, the ``validate`` command and CI all read the same
pass/fail records.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .metrics import find_sync_point, goodput_at, metrics_report, time_metrics
from .params import ModelParams
from .simulator import SimConfig, SimReport, run_simulation, seed_for
from .solver import model_at, solve_model
from .space_chain import (
    build_space_chain,
    df_pmf,
    dtx_pmf,
    dtx_prefactor,
    dtx_total_mass,
    rzone_closed_forms,
    stationary_space,
)
from .support import support_probabilities, support_probabilities_by_series, FIELDS
from .time_chain import build_time_chain, stationary_time

DEFAULT_SEED_BASE = 20_160_913
SIM_GRID = tuple(itertools.product((0.01, 0.05, 0.1, 0.2, 0.34), (8, 16)))
SIM_METRICS = ("pi_I", "pi_TX", "pi_RB", "T_RB", "T_RXP", "p_IF", "G")


@dataclass(frozen=True)
class ToleranceProfile:
    rel_tol: float = 0.05
    abs_floor: float = 0.005
    tv_bound: float = 0.02
    chi2_alpha: float = 0.05
    p_of_rel_tol: float = 0.05
    # per-metric overrides of rel_tol, e.g. {"p_IF": 0.1}
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.rel_tol, self.abs_floor, self.tv_bound, self.chi2_alpha, self.p_of_rel_tol]
        vals += list(self.overrides.values())
        if any(not (v > 0) for v in vals):
            raise ValueError("tolerances must be positive")
        if self.chi2_alpha >= 1:
            raise ValueError("chi-square significance must be below 1")

    def rel(self, metric: str) -> float:
        return self.overrides.get(metric, self.rel_tol)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    point: dict = field(default_factory=dict)
    detail: str = ""

    def line(self) -> str:
        where = " ".join(f"{k}={v}" for k, v in self.point.items())
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name} [{where}] value={self.value:.6g} bound={self.bound:.3g} {self.detail}".rstrip()


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)
    elapsed: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add(self, name, passed, value, bound, point=None, detail=""):
        self.checks.append(Check(name, bool(passed), float(value), float(bound), dict(point or {}), detail))

    def summary(self) -> str:
        n = len(self.checks)
        return f"{self.suite}: {n - len(self.failures)}/{n} checks passed in {self.elapsed:.1f} s"

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "elapsed": self.elapsed,
            "meta": self.meta,
            "checks": [asdict(c) for c in self.checks],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def relative_error(a: float, s: float, floor: float = 1e-6) -> float:
    return abs(a - s) / max(abs(a), floor)


def within(a: float, s: float, rel: float, floor: float) -> bool:
    """Relative agreement, with absolute differences below ``floor`` accepted."""
    d = abs(a - s)
    return d <= rel * abs(a) or d <= floor


# -- identities ---------------------------------------------------------------


def default_identity_grid() -> list[ModelParams]:
    """100 (p_tx, L, R) points spanning the studied range."""
    ps = np.geomspace(0.002, 0.9, 25)
    shapes = [(32, 16), (32, 8), (16, 4), (8, 2)]
    return [ModelParams(float(p), L, R) for (L, R), p in itertools.product(shapes, ps)]


def run_identity_suite(grid: Optional[Iterable[ModelParams]] = None) -> SuiteReport:
    """Closed-form identities at every solved grid point."""
    rep = SuiteReport("identity")
    t0 = time.perf_counter()
    grid = list(grid) if grid is not None else default_identity_grid()
    for params in grid:
        pt = {"p_tx": params.p_tx, "L": params.L, "R": params.R}
        try:
            model = solve_model(params)
        except Exception as exc:  # the point still counts, as a failure
            rep.add("solve", False, float("nan"), 0.0, pt, f"{type(exc).__name__}: {exc}")
            continue
        f = model.p_OF
        s = model.support
        rep.add("idle_exit_sum", abs(s.idle_exit_sum() - 1.0) <= 1e-12, abs(s.idle_exit_sum() - 1.0), 1e-12, pt)
        rep.add("v_exit_sum", abs(s.v_exit_sum() - 1.0) <= 1e-12, abs(s.v_exit_sum() - 1.0), 1e-12, pt)
        rz = rzone_closed_forms(params.p_tx, params.L, params.R, f)
        e59 = abs(rz.p_NT_NT + math.fsum(rz.p_T_NT) - 1.0)
        rep.add("rzone_exit_sum", e59 <= 1e-12, e59, 1e-12, pt)
        e513 = abs(rz.pi_NT + math.fsum(rz.pi_T.ravel()) - 1.0)
        rep.add("rzone_normalisation", e513 <= 1e-12, e513, 1e-12, pt)
        tm = time_metrics(model)
        if tm.degenerate is None:
            e = relative_error(tm.T_NI_mean, tm.T_NI_via_busy)
            rep.add("T_NI_two_routes", e <= 1e-9, e, 1e-9, pt)
        else:
            rep.add("T_NI_two_routes", True, 0.0, 1e-9, pt, f"skipped: {tm.degenerate}")
        e = abs(dtx_total_mass(params, f) - 1.0)
        rep.add("dtx_mass", e <= 1e-9, e, 1e-9, pt)
        e = abs(df_total_mass(f) - 1.0)
        rep.add("df_mass", e <= 1e-9, e, 1e-9, pt)
        near = dtx_pmf(params, f, np.arange(1, params.R + 1))
        e = abs(dtx_prefactor(params, f) - (1.0 - math.fsum(near)))
        rep.add("dtx_prefactor", e <= 1e-12, e, 1e-12, pt)
        rep.add("time_residual", model.time_stationary.residual < 1e-10, model.time_stationary.residual, 1e-10, pt)
        rep.add("space_residual", model.space_stationary.residual < 1e-10, model.space_stationary.residual, 1e-10, pt)
    rep.elapsed = time.perf_counter() - t0
    rep.meta["points"] = len(grid)
    return rep


def df_total_mass(p_of: float, max_terms: int = 1_000_000) -> float:
    """Term-by-term sum of the d_F law plus the closed geometric remainder."""
    n = min(max_terms, max(1, int(math.ceil(-36.0 / math.log1p(-p_of)))))
    head = math.fsum(df_pmf(p_of, np.arange(1, n + 1)))
    return head + math.exp(n * math.log1p(-p_of))


# -- oracle equivalence -------------------------------------------------------


def default_oracle_grid() -> list[tuple[float, int, int, float]]:
    """(p_tx, L, R, p_OF) points; p_OF kept >= 0.01 so the series stays short."""
    vals = np.linspace(0.01, 0.9, 5)
    out = []
    for (p, f), L, R in itertools.product(itertools.product(vals, vals), (2, 8, 16, 32), (2, 4, 8, 16)):
        out.append((float(p), L, R, float(f)))
    return out


def run_oracle_suite(
    grid: Optional[Sequence[tuple[float, int, int, float]]] = None,
    power_stride: int = 8,
    busy_runs: int = 12,
    seed: int = DEFAULT_SEED_BASE,
) -> SuiteReport:
    """Closed forms against the series oracle, the structured stationary
    solves against power iteration (every ``power_stride``-th point), and
    the incremental busy counters against a full range scan."""
    rep = SuiteReport("oracle")
    t0 = time.perf_counter()
    grid = list(grid) if grid is not None else default_oracle_grid()
    for i, (p, L, R, f) in enumerate(grid):
        pt = {"p_tx": p, "L": L, "R": R, "p_OF": f}
        closed = support_probabilities(p, L, R, f)
        series = support_probabilities_by_series(p, L, R, f, tail_eps=1e-15)
        dev = max(abs(getattr(closed, k) - getattr(series, k)) for k in FIELDS)
        rep.add("support_vs_series", dev <= 1e-9, dev, 1e-9, pt)
        if i % power_stride == 0:
            params = ModelParams(p, L, R)
            tc = build_time_chain(params, closed)
            dev = float(np.max(np.abs(stationary_time(tc).pi - stationary_time(tc, "power").pi)))
            rep.add("time_structured_vs_power", dev <= 1e-9, dev, 1e-9, pt)
            sc = build_space_chain(params, f)
            dev = float(np.max(np.abs(stationary_space(sc).pi - stationary_space(sc, "power").pi)))
            rep.add("space_structured_vs_power", dev <= 1e-9, dev, 1e-9, pt)
    rng = np.random.default_rng(seed)
    for j in range(busy_runs):
        R = int(rng.integers(1, 7))
        N = int(rng.integers(4 * R + 4, 65))
        L = int(rng.integers(1, 9))
        p = float(rng.uniform(0.01, 0.6))
        cfg = SimConfig(p_tx=p, N=N, L=L, R=R, warmup_slots=50, measure_slots=400, n_batches=2,
                        seed=seed_for(seed, j), check_busy=True)
        pt = {"N": N, "L": L, "R": R, "p_tx": round(p, 6)}
        for backend in ("python", "cython"):
            try:
                sim = run_simulation(cfg, backend=backend)
            except ImportError:
                continue
            mism = sim.counts["busy_mismatches"]
            rep.add(f"busy_counters_vs_scan[{backend}]", mism == 0, mism, 0, pt)
    rep.elapsed = time.perf_counter() - t0
    return rep


# -- anchors and structural claims ---------------------------------------------


def fixed_point_anchor_checks(rep: SuiteReport) -> None:
    for p_tx, ref in ((0.1, 0.0996), (0.34, 0.0116)):
        t = time.perf_counter()
        m = solve_model(ModelParams(p_tx, 32, 16))
        dt = time.perf_counter() - t
        pt = {"p_tx": p_tx, "L": 32, "R": 16}
        rep.add("p_OF_anchor", abs(m.p_OF - ref) <= 5e-4, m.p_OF, 5e-4, pt, f"reference={ref}")
        rep.add("solve_runtime_s", dt < 2.0, dt, 2.0, pt)


def sync_regime_checks(rep: SuiteReport) -> None:
    for R in (8, 16):
        m = solve_model(ModelParams(0.8, 32, R))
        r = metrics_report(m)
        pt = {"p_tx": 0.8, "L": 32, "R": R}
        rep.add("pi_I_sync", abs(r.pi_I - 1 / 33) <= 2e-3, r.pi_I, 2e-3, pt, "reference=1/33")
        rep.add("T_RB_sync", abs(r.time.T_RB_mean - 32) <= 0.5, r.time.T_RB_mean, 0.5, pt, "reference=32")
        rep.add("G_sync", r.goodput.G < 1e-3, r.goodput.G, 1e-3, pt)


def goodput_grid() -> np.ndarray:
    return np.geomspace(1e-3, 0.9, 48)


def peak_goodput(L: int, R: int, grid: Optional[np.ndarray] = None) -> tuple[float, float]:
    """(p_tx, G) at the goodput maximum, refined between grid neighbours."""
    xs = goodput_grid() if grid is None else np.asarray(grid)
    gs = np.array([goodput_at(float(x), L, R) for x in xs])
    i = int(np.argmax(gs))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]
    res = optimize.minimize_scalar(
        lambda u: -goodput_at(math.exp(u), L, R),
        bounds=(math.log(lo), math.log(hi)),
        method="bounded",
        options={"xatol": 1e-6},
    )
    if -res.fun >= gs[i]:
        return math.exp(res.x), float(-res.fun)
    return float(xs[i]), float(gs[i])


def structural_checks(rep: SuiteReport) -> None:
    grid = goodput_grid()
    sp16 = find_sync_point(32, 16, grid)
    sp8 = find_sync_point(32, 8, grid)
    ok = sp16 is not None and sp8 is not None and sp16 < sp8
    rep.add("sync_point_order", ok, sp16 if sp16 is not None else float("nan"),
            sp8 if sp8 is not None else float("nan"), {"L": 32}, "SP(R=16) must be below SP(R=8)")
    x16, g16 = peak_goodput(32, 16, grid)
    x8, g8 = peak_goodput(32, 8, grid)
    rep.add("max_G_larger_R16", g16 > g8, g16, g8, {"L": 32}, f"argmax R16={x16:.5g} R8={x8:.5g}")
    rep.add("argmax_G_smaller_R16", x16 < x8, x16, x8, {"L": 32})
    for p_tx in (0.1, 0.34):
        params = ModelParams(p_tx, 32, 16)
        m = solve_model(params)
        f = dtx_pmf(params, m.p_OF, np.arange(1, 20))
        ok1 = f[0] > f[1]
        ok17 = f[16] > f[15] and f[16] > f[17]
        rep.add("dtx_peak_k1", ok1, f[0], f[1], {"p_tx": p_tx}, "pmf(1) vs pmf(2)")
        rep.add("dtx_peak_k17", ok17, f[16], max(f[15], f[17]), {"p_tx": p_tx}, "pmf(17) vs neighbours")


def run_anchor_suite() -> SuiteReport:
    rep = SuiteReport("anchor")
    t0 = time.perf_counter()
    fixed_point_anchor_checks(rep)
    sync_regime_checks(rep)
    structural_checks(rep)
    rep.elapsed = time.perf_counter() - t0
    return rep


# -- simulation against the model ---------------------------------------------


@dataclass(frozen=True)
class ChiSquare:
    p_hat: float
    statistic: float
    dof: int
    p_value: float
    n: int


def geometric_chi_square(counts: np.ndarray, p: Optional[float] = None, min_expected: float = 5.0) -> ChiSquare:
    """Goodness of fit of a histogram on k >= 1 to a geometric law.

    With ``p`` omitted the parameter is the maximum-likelihood fit and one
    extra degree of freedom is removed.  Bins are merged into a tail bin so
    every expected count is at least ``min_expected``.
    """
    counts = np.asarray(counts, dtype=float)
    k = np.arange(counts.size)
    n = counts[1:].sum()
    if n == 0:
        return ChiSquare(float("nan"), float("nan"), 0, float("nan"), 0)
    fitted = p is None
    if fitted:
        p = n / (k[1:] * counts[1:]).sum()
    log_b = math.log1p(-p) if p < 1 else -math.inf
    kmax = 1
    while kmax < counts.size and n * math.exp(kmax * log_b) >= min_expected:
        kmax += 1
    ks = np.arange(1, kmax)
    obs = np.append(counts[1:kmax], counts[kmax:].sum())
    exp = np.append(n * p * np.exp((ks - 1) * log_b), n * math.exp((kmax - 1) * log_b))
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = obs.size - 1 - (1 if fitted else 0)
    pv = float(stats.chi2.sf(stat, dof)) if dof > 0 else float("nan")
    return ChiSquare(float(p), stat, dof, pv, int(n))


@dataclass
class PointComparison:
    p_tx: float
    L: int
    R: int
    analytic: dict
    simulated: dict
    stderr: dict
    tv_dtx: float
    p_OF: float
    p_OF_hat: float
    chi2: ChiSquare
    seeds: list


def _analytic_values(params: ModelParams):
    model = solve_model(params)
    r = metrics_report(model)
    vals = {
        "pi_I": r.pi_I,
        "pi_TX": r.pi_TX,
        "pi_RB": r.pi_RB,
        "T_RB": r.time.T_RB_mean,
        "T_RXP": r.time.T_RXP_mean,
        "p_IF": r.interference.p_IF,
        "G": r.goodput.G,
    }
    return model, vals


def _run_one(cfg: SimConfig) -> SimReport:
    rep = run_simulation(cfg)
    rep.raw = None
    return rep


def compare_point(
    p_tx: float, L: int, R: int, seeds: Sequence[int], *, N: int = 800,
    warmup: int = 50_000, measure: int = 500_000, workers: int = 1,
) -> PointComparison:
    params = ModelParams(p_tx, L, R)
    model, analytic = _analytic_values(params)
    cfgs = [SimConfig(p_tx=p_tx, N=N, L=L, R=R, warmup_slots=warmup, measure_slots=measure, seed=s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            sims = list(ex.map(_run_one, cfgs))
    else:
        sims = [_run_one(c) for c in cfgs]
    simulated, stderr = {}, {}
    for k in SIM_METRICS:
        v = np.array([getattr(s, k).mean for s in sims])
        simulated[k] = float(v.mean())
        stderr[k] = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    dtx = sum(s.dtx_counts for s in sims)
    emp = dtx / dtx.sum() if dtx.sum() else dtx.astype(float)
    ana = dtx_pmf(params, model.p_OF, np.arange(1, N + 1))
    tv = 0.5 * (float(np.abs(ana - emp).sum()) + max(0.0, 1.0 - float(ana.sum())))
    df = sum(s.df_counts for s in sims)
    kk = np.arange(df.size)
    p_hat = float(df.sum() / (kk * df).sum()) if df.sum() else float("nan")
    chi = geometric_chi_square(sum(s.df_thin_counts for s in sims))
    return PointComparison(p_tx, L, R, analytic, simulated, stderr, tv, model.p_OF, p_hat, chi, list(seeds))


def run_sim_vs_analytic_suite(
    profile: Optional[ToleranceProfile] = None,
    grid: Sequence[tuple[float, int]] = SIM_GRID,
    *, L: int = 32, n_seeds: int = 5, seed_base: int = DEFAULT_SEED_BASE,
    N: int = 800, warmup: int = 50_000, measure: int = 500_000, workers: int = 1,
    corrupt: Optional[dict] = None,
) -> SuiteReport:
    """Simulated against analytic metrics at every (p_tx, R) of ``grid``.

    ``corrupt`` maps metric names to factors applied to the analytic value,
    for checking that the harness flags a wrong model.
    """
    profile = profile or ToleranceProfile()
    rep = SuiteReport("sim_vs_analytic")
    t0 = time.perf_counter()
    rows = []
    for i, (p_tx, R) in enumerate(grid):
        seeds = [seed_for(seed_base, 100 * i + j) for j in range(n_seeds)]
        c = compare_point(p_tx, L, R, seeds, N=N, warmup=warmup, measure=measure, workers=workers)
        pt = {"p_tx": p_tx, "L": L, "R": R}
        for k in SIM_METRICS:
            a = c.analytic[k] * (corrupt or {}).get(k, 1.0)
            s = c.simulated[k]
            ok = within(a, s, profile.rel(k), profile.abs_floor)
            rep.add(k, ok, relative_error(a, s), profile.rel(k), pt,
                    f"analytic={a:.6g} simulated={s:.6g} se={c.stderr[k]:.2g}")
            rows.append(comparison_row(p_tx, k, a, s, c.stderr[k]))
        rep.add("dtx_total_variation", c.tv_dtx < profile.tv_bound, c.tv_dtx, profile.tv_bound, pt)
        e = relative_error(c.p_OF, c.p_OF_hat)
        rep.add("df_fit_p_OF", e <= profile.p_of_rel_tol, e, profile.p_of_rel_tol, pt,
                f"solved={c.p_OF:.6g} fitted={c.p_OF_hat:.6g}")
        rep.add("df_chi_square", c.chi2.p_value >= profile.chi2_alpha, c.chi2.p_value, profile.chi2_alpha, pt,
                f"stat={c.chi2.statistic:.4g} dof={c.chi2.dof} n={c.chi2.n}")
    rep.elapsed = time.perf_counter() - t0
    rep.meta = {"seed_base": seed_base, "n_seeds": n_seeds, "N": N, "warmup": warmup,
                "measure": measure, "profile": asdict(profile), "rows": rows}
    return rep


def comparison_row(p_tx: float, metric: str, analytic: float, simulated: float, se: float) -> dict:
    return {
        "p_tx": p_tx,
        "metric": metric,
        "analytic": analytic,
        "simulated": simulated,
        "stderr": se,
        "rel_error": relative_error(analytic, simulated),
    }
