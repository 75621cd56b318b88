import json

import numpy as np
import pytest

from hidden_csma import ModelParams, metrics_report, solve_model
from hidden_csma.metrics import (
    find_sync_point,
    goodput,
    interference_free,
    time_metrics,
)

# Independent pipeline (series support, dense stationary solves, brentq):
# (p_tx, R) -> pi_I, T_RB, p_IF, G with L = 32.
ORACLE = {
    (0.1, 16): (0.022156667697459383, 64.36576064082448, 0.187840589284401, 0.08988799542218402),
    (0.34, 16): (0.026143332814091754, 40.00269794369923, 0.0010873301059916472, 0.0006087476247541718),
    (0.05, 16): (0.03387240967266611, 59.64385305407807, 0.3121368978970637, 0.16071422472167599),
    (0.1, 8): (0.03261206397212886, 62.9806848594448, 0.29408023419734325, 0.13652018558854148),
}
GRID = np.geomspace(1e-3, 0.9, 24)


@pytest.mark.parametrize("key", sorted(ORACLE))
def test_oracle_values(key, solved):
    p, R = key
    r = metrics_report(solved(p, 32, R))
    got = (r.pi_I, r.time.T_RB_mean, r.interference.p_IF, r.goodput.G)
    assert np.allclose(got, ORACLE[key], rtol=1e-8, atol=0)


@pytest.mark.parametrize("p", [0.002, 0.05, 0.1, 0.34, 0.8])
@pytest.mark.parametrize("R", [8, 16])
def test_time_identities(p, R, solved):
    m = solved(p, 32, R)
    t = time_metrics(m)
    assert t.T_I_mean == pytest.approx(1 / (1 - m.support.pII), rel=1e-15)
    assert t.T_TX == 32
    assert t.T_TXP_mean == pytest.approx(32 + t.T_NTX_mean, rel=1e-14)
    assert t.T_RB_mean == pytest.approx(t.T_RXB_mean / (1 - t.p_ConRX), rel=1e-12)
    assert t.T_RB_mean >= 32 - 1e-9
    assert abs(t.T_NI_mean - t.T_NI_via_busy) <= 1e-9 * t.T_NI_mean
    assert 0 <= t.p_ConRX < 1 and t.T_RXB_mean <= t.T_RB_mean


@pytest.mark.parametrize("R", [8, 16])
def test_synchronised_busy_length(R, solved):
    m = solved(0.8, 32, R)
    assert abs(time_metrics(m).T_RB_mean - 32) <= 0.5
    g = goodput(m)
    assert g.G < 1e-3 and g.sync_regime


def test_quiet_channel_is_interference_free(solved):
    assert interference_free(solved(1e-6)).p_IF > 1 - 1e-3


@pytest.mark.parametrize("p", [0.01, 0.1, 0.34])
def test_conditional_distance_law(p, solved):
    ir = interference_free(solved(p))
    assert abs(ir.f_dRX_given_IF.sum() - 1) <= 1e-9
    assert np.all(ir.f_dRX_given_IF >= 0)
    assert 0 <= ir.p_IF <= 1


def test_close_receiver_is_safer_under_load(solved):
    f = interference_free(solved(0.34)).f_dRX_given_IF
    assert f[0] > f[15]


@pytest.mark.parametrize("p", [0.002, 0.05, 0.34, 0.8])
def test_goodput_bound(p, solved):
    m = solved(p)
    t = time_metrics(m)
    g = goodput(m)
    assert 0 <= g.G <= 32 / t.T_RXP_mean + 1e-15


@pytest.mark.parametrize("R", [8, 16])
def test_monotone_trends(R):
    pi_I, p_IF = [], []
    for p in GRID:
        r = metrics_report(solve_model(ModelParams(float(p), 32, R)))
        pi_I.append(r.pi_I)
        p_IF.append(r.interference.p_IF)
    pi_I, p_IF = np.array(pi_I), np.array(p_IF)
    assert np.all(np.diff(p_IF) <= 0)
    # idle share falls until the network synchronises, then climbs back
    # to one slot in L + 1
    low = int(np.argmin(pi_I))
    assert np.all(np.diff(pi_I[: low + 1]) <= 0)
    assert np.all(np.diff(pi_I[low:]) >= -1e-12)
    assert pi_I[-1] == pytest.approx(1 / 33, abs=1e-4)


def test_sync_point_grid_validation():
    with pytest.raises(ValueError):
        find_sync_point(32, 16, np.linspace(0.1, 0.9, 10))
    with pytest.raises(ValueError):
        find_sync_point(32, 16, np.linspace(0.9, 0.1, 20))


def test_sync_point_coarse_grid():
    sp = find_sync_point(32, 16, np.linspace(0.05, 0.85, 16))
    assert 0.3 < sp < 0.36
    assert goodput(solve_model(ModelParams(sp, 32, 16))).G < 1e-3


def test_json_report(solved):
    r = metrics_report(solved(0.1))
    d = json.loads(r.to_json())
    assert d["p_OF"] == r.p_OF
    assert d["goodput"]["G"] == r.goodput.G
    assert len(d["interference"]["f_dRX_given_IF"]) == 16
    assert d["diagnostics"]["residual"] < 1e-10
