import warnings

import numpy as np
import pytest

from hidden_csma import ModelParams, solve_model, solve_p_OF
from hidden_csma import solver
from hidden_csma.solver import MultipleRootsWarning, NoRootError, SolverError, residual

# p_OF from an independent pipeline: truncated-series support values,
# dense stationary solves of both chains and brentq on the residual.
ORACLE_P_OF = {
    (0.1, 16): 0.09961385833586871,
    (0.34, 16): 0.011571758016099467,
    (0.05, 16): 0.10560599877051371,
    (0.1, 8): 0.19517203321151638,
}


@pytest.mark.parametrize("key", sorted(ORACLE_P_OF))
def test_oracle_fixed_points(key, solved):
    p, R = key
    m = solved(p, 32, R)
    assert m.p_OF == pytest.approx(ORACLE_P_OF[key], rel=1e-9)
    assert m.diagnostics.residual < 1e-10
    assert abs(m.pi_I - m.pi_F) <= 1e-10


@pytest.mark.parametrize("p, expected", [(0.1, 0.0996), (0.34, 0.0116)])
def test_published_fixed_points(p, expected, solved):
    assert abs(solved(p).p_OF - expected) <= 5e-4


def test_bracket_width():
    p_of, d = solve_p_OF(ModelParams(0.1, 32, 16))
    lo, hi = d.bracket
    assert lo <= p_of <= hi and hi - lo <= 1e-12
    assert d.iterations > 0 and not d.multiple_roots


def test_residual_continuity():
    params = ModelParams(0.1, 32, 16)
    xs = np.linspace(0.001, 0.999, 200)
    jumps = [abs(residual(x, params) - residual(x + 1e-6, params)) for x in xs]
    assert max(jumps) < 1e-3


@pytest.mark.parametrize("p", [0.001, 0.01, 0.1, 0.5, 0.9])
@pytest.mark.parametrize("R", [8, 16])
def test_sign_change_on_grid(p, R):
    params = ModelParams(p, 32, R)
    rs = np.array([residual(x, params) for x in solver.CANDIDATES])
    assert np.any(np.sign(rs[:-1]) != np.sign(rs[1:]))


def test_quiet_channel(solved):
    assert solved(1e-6).p_OF < 1e-3


def test_deterministic():
    a = solve_model(ModelParams(0.2, 32, 8))
    b = solve_model(ModelParams(0.2, 32, 8))
    assert a.p_OF == b.p_OF
    assert np.array_equal(a.time_stationary.pi, b.time_stationary.pi)
    assert np.array_equal(a.space_stationary.pi, b.space_stationary.pi)


@pytest.mark.parametrize("p", [0.01, 0.1, 0.2])
def test_stability(p, solved):
    base = solved(p).p_OF
    moved = solve_p_OF(ModelParams(p + 1e-9, 32, 16))[0]
    assert abs(moved - base) < 1e-5


def test_tol_bounds():
    with pytest.raises(ValueError):
        solve_p_OF(ModelParams(0.1, 32, 16), tol=1e-15)
    with pytest.raises(ValueError):
        residual(0.0, ModelParams(0.1, 32, 16))


def test_no_root(monkeypatch):
    monkeypatch.setattr(solver, "residual", lambda x, params: 1.0 + x)
    with pytest.raises(NoRootError):
        solve_p_OF(ModelParams(0.1, 32, 16))
    assert issubclass(NoRootError, SolverError)


def test_multiple_roots(monkeypatch):
    monkeypatch.setattr(solver, "residual", lambda x, params: (x - 0.25) * (x - 0.6))
    with pytest.warns(MultipleRootsWarning):
        root, d = solve_p_OF(ModelParams(0.1, 32, 16))
    assert d.multiple_roots
    assert len(d.roots) == 2
    assert np.allclose(d.roots, [0.25, 0.6], atol=1e-11)
    assert root in d.roots


def test_large_residual_rejected(monkeypatch):
    # a step: the sign flips but never gets small
    monkeypatch.setattr(solver, "residual", lambda x, params: 1.0 if x < 0.3 else -1.0)
    with pytest.raises(SolverError):
        solve_p_OF(ModelParams(0.1, 32, 16))


def test_single_root_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_p_OF(ModelParams(0.05, 16, 4))
