import json

import numpy as np
import pytest
from scipy import stats

from hidden_csma import ModelParams
from hidden_csma.validation import (
    SuiteReport,
    ToleranceProfile,
    compare_point,
    default_identity_grid,
    default_oracle_grid,
    df_total_mass,
    geometric_chi_square,
    relative_error,
    run_identity_suite,
    run_sim_vs_analytic_suite,
    within,
)


@pytest.mark.parametrize("kw", [
    dict(rel_tol=0), dict(abs_floor=-1), dict(tv_bound=0), dict(chi2_alpha=0), dict(chi2_alpha=1),
    dict(p_of_rel_tol=0), dict(overrides={"G": 0.0}),
])
def test_profile_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        ToleranceProfile(**kw)


def test_profile_overrides():
    p = ToleranceProfile(overrides={"G": 0.1})
    assert p.rel("G") == 0.1 and p.rel("pi_I") == 0.05


def test_comparison_rule():
    assert relative_error(0.0, 1e-7) == pytest.approx(0.1)
    assert relative_error(2.0, 2.1) == pytest.approx(0.05)
    assert within(0.001, 0.004, 0.05, 0.005)
    assert not within(1.0, 1.06, 0.05, 0.005)
    assert within(1.0, 1.049, 0.05, 0.005)


def test_grids_are_large_enough():
    assert len(default_identity_grid()) >= 100
    assert len(default_oracle_grid()) >= 100


def test_df_total_mass():
    assert abs(df_total_mass(0.0996) - 1) <= 1e-9
    assert abs(df_total_mass(1e-4) - 1) <= 1e-9


def test_identity_suite_subset():
    grid = [ModelParams(p, L, R) for p, L, R in [(0.01, 32, 16), (0.3, 16, 4), (0.9, 8, 2)]]
    rep = run_identity_suite(grid)
    assert rep.passed, [c.line() for c in rep.failures]
    assert len(rep.checks) >= 3 * 9


def test_report_serialisation():
    r = SuiteReport("x")
    r.add("a", True, 0.1, 1.0, {"p": 1})
    r.add("b", False, 2.0, 1.0)
    assert not r.passed and [c.name for c in r.failures] == ["b"]
    assert r.failures[0].line().startswith("FAIL b")
    d = json.loads(r.to_json())
    assert d["checks"][0]["point"] == {"p": 1}
    assert "1/2" in r.summary()


class TestGeometricChiSquare:
    def test_calibrated_under_the_null(self):
        rng = np.random.default_rng(3)
        pvals = []
        for _ in range(300):
            x = rng.geometric(0.1, size=2000)
            pvals.append(geometric_chi_square(np.bincount(x)).p_value)
        rate = np.mean(np.array(pvals) < 0.05)
        # binomial(300, 0.05): mean 15, sd 3.8
        assert 0.01 < rate < 0.10
        assert stats.kstest(pvals, "uniform").pvalue > 1e-3

    def test_fit_and_known_parameter(self):
        rng = np.random.default_rng(4)
        c = np.bincount(rng.geometric(0.2, size=50_000))
        fit = geometric_chi_square(c)
        assert fit.p_hat == pytest.approx(0.2, rel=0.02)
        known = geometric_chi_square(c, p=0.2)
        assert known.p_hat == 0.2 and known.p_value > 1e-3
        assert geometric_chi_square(c, p=0.25).p_value < 1e-6

    def test_rejects_mixture(self):
        rng = np.random.default_rng(5)
        x = np.concatenate([rng.geometric(0.05, 20_000), rng.geometric(0.5, 20_000)])
        assert geometric_chi_square(np.bincount(x)).p_value < 1e-6

    def test_expected_counts_pooled(self):
        rng = np.random.default_rng(6)
        c = np.bincount(rng.geometric(0.3, size=500))
        r = geometric_chi_square(c)
        # every bin keeps an expected count of at least 5
        assert r.dof + 2 <= 500 * 0.3 / 5 + 2
        assert r.n == 500

    def test_empty(self):
        r = geometric_chi_square(np.zeros(5))
        assert r.n == 0 and np.isnan(r.p_value)


def test_compare_point_small():
    c = compare_point(0.05, 8, 4, seeds=[1, 2], N=100, warmup=2000, measure=40_000)
    assert set(c.simulated) == set(c.analytic) >= {"pi_I", "G"}
    assert relative_error(c.analytic["pi_I"], c.simulated["pi_I"]) < 0.05
    assert c.tv_dtx < 0.05
    assert abs(c.p_OF_hat / c.p_OF - 1) < 0.1


def test_sim_suite_flags_corruption():
    kw = dict(grid=[(0.05, 4)], L=8, n_seeds=2, N=100, warmup=2000, measure=40_000)
    clean = run_sim_vs_analytic_suite(**kw)
    bad = run_sim_vs_analytic_suite(corrupt={"pi_TX": 1.3}, **kw)
    by = {c.name: c for c in clean.checks}
    assert by["pi_TX"].passed and by["pi_I"].passed
    failed = {c.name for c in bad.failures}
    assert "pi_TX" in failed
    assert len(bad.meta["rows"]) == 7
    assert clean.meta["seed_base"] == bad.meta["seed_base"]
