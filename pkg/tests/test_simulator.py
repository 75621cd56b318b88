import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hidden_csma import ParameterError
from hidden_csma import simulator as sim
from hidden_csma._pykernel import BUSY, IDLE, TX, Xoshiro256ss
from hidden_csma.simulator import (
    RingState,
    SimConfig,
    busy_counts,
    classify_bursts,
    kernel_for,
    run_simulation,
    seed_for,
    snapshot_spatial,
    step_slot,
)

HAVE_C = True
try:
    kernel_for("cython")
except ImportError:  # pragma: no cover
    HAVE_C = False
needs_c = pytest.mark.skipif(not HAVE_C, reason="compiled kernel not built")


def small(p=0.1, **kw):
    base = dict(N=72, L=8, R=4, warmup_slots=200, measure_slots=2000, seed=11, n_batches=4)
    base.update(kw)
    return SimConfig(p, **base)


def same_raw(a, b):
    keys = {k for k in a if not k.startswith("trace")}
    return keys == {k for k in b if not k.startswith("trace")} and all(np.array_equal(a[k], b[k]) for k in keys)


def test_xoshiro_reference_values():
    # splitmix64 from 0 gives the published first output 0xe220a8397b1dcdaf
    from hidden_csma._pykernel import _splitmix64

    assert _splitmix64(0)[1] == 0xE220A8397B1DCDAF
    r = Xoshiro256ss(1)
    u = [r.uniform() for _ in range(1000)]
    assert 0 <= min(u) and max(u) < 1
    assert abs(np.mean(u) - 0.5) < 0.03


@needs_c
def test_c_rng_matches_python():
    from hidden_csma import _ckernel

    r = Xoshiro256ss(2**63 + 12345)
    expected = np.array([r.uniform() for _ in range(500)])
    assert np.array_equal(np.asarray(_ckernel.rng_uniforms(2**63 + 12345, 500)), expected)


@needs_c
@pytest.mark.parametrize("p, N, L, R", [(0.1, 72, 8, 4), (0.34, 100, 6, 8), (0.02, 40, 3, 1), (0.7, 64, 1, 2)])
def test_kernels_identical(p, N, L, R):
    cfg = SimConfig(p, N=N, L=L, R=R, warmup_slots=150, measure_slots=1500, seed=99, n_batches=5,
                    chi_stride=7, check_busy=True, trace=True)
    a = run_simulation(cfg, "python")
    b = run_simulation(cfg, "cython")
    assert same_raw(a.raw, b.raw)
    assert np.array_equal(a.raw["trace_status"], b.raw["trace_status"])
    assert np.array_equal(a.raw["trace_starts"], b.raw["trace_starts"])
    assert a.to_dict()["estimates"] == b.to_dict()["estimates"]


def test_deterministic():
    a = run_simulation(small())
    b = run_simulation(small())
    assert a.to_json() == b.to_json()
    c = run_simulation(small(seed=12))
    assert c.to_json() != a.to_json()


def test_seed_echo():
    r = run_simulation(small(seed=None))
    assert isinstance(r.seed, int) and 0 <= r.seed < 2**64
    assert r.config.seed == r.seed
    assert r.generator == sim.GENERATOR


def test_seed_for():
    assert seed_for(5, 1) == seed_for(5, 1)
    assert len({seed_for(5, i) for i in range(50)}) == 50


def test_quiet_channel():
    r = run_simulation(small(1e-9))
    assert r.counts["tx_starts"] == 0
    assert r.pi_I.mean == 1.0
    assert r.counts["ring_idle_slots"] == 2000


def test_single_transmitter_stepper():
    N, L, R = 40, 5, 3
    st_ = RingState(N, L, R, 0.5, 0, np.full(N, 10**9, np.int64), np.full(N, -1, np.int64), np.zeros(N, np.int64))
    st_.countdown[7] = 1
    rng = Xoshiro256ss(0)
    busy_slots = []
    for _ in range(L + 2):
        st_ = step_slot(st_, rng)
        st_.countdown[7] = max(st_.countdown[7], 10**9)
        busy_slots.append(np.flatnonzero(st_.status == BUSY))
    neighbours = sorted(((7 + o) % N for o in range(-R, R + 1) if o))
    for b in busy_slots[:L]:
        assert b.tolist() == neighbours
    assert busy_slots[L].size == 0


def test_stepper_matches_kernel_trace():
    N, L, R, p = 48, 4, 3, 0.15
    cfg = SimConfig(p, N=N, L=L, R=R, warmup_slots=1, measure_slots=300, seed=5, n_batches=2, trace=True)
    r = run_simulation(cfg, "python")
    rng = Xoshiro256ss(5)
    s = RingState.initial(N, L, R, p, rng)
    s = step_slot(s, rng)
    for t in range(300):
        s = step_slot(s, rng)
        assert np.array_equal(s.status, r.raw["trace_status"][t]), t


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 0.6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**64 - 1))
def test_busy_counters_and_invariants(p, L, R, seed):
    N = min(64, max(4 * R + 4, 24))
    cfg = SimConfig(p, N=N, L=L, R=R, warmup_slots=50, measure_slots=400, seed=seed, n_batches=2, check_busy=True)
    r = run_simulation(cfg, "python")
    c = r.counts
    assert c["busy_mismatches"] == 0
    assert c["sync_violations"] == 0
    assert c["bad_tx_runs"] == 0
    occ = r.raw["occ"]
    assert occ.sum() == N * 400
    assert abs(r.pi_I.mean + r.pi_TX.mean + r.pi_RB.mean - 1) <= 1e-12


@needs_c
def test_compiled_busy_counters():
    for i in range(6):
        cfg = SimConfig(0.05 + 0.1 * i, N=64, L=1 + i, R=1 + i, warmup_slots=100, measure_slots=2000,
                        seed=seed_for(1, i), n_batches=2, check_busy=True)
        c = run_simulation(cfg, "cython").counts
        assert c["busy_mismatches"] == 0 and c["sync_violations"] == 0 and c["bad_tx_runs"] == 0


def test_in_range_synchrony_in_trace():
    cfg = small(0.3, trace=True)
    r = run_simulation(cfg)
    starts = r.raw["trace_starts"]
    N, L, R = cfg.N, cfg.L, cfg.R
    by_slot = {}
    for t, s in starts:
        for t2 in range(t, t + L):
            by_slot.setdefault(t2, []).append((s, t))
    for active in by_slot.values():
        for i, (a, ta) in enumerate(active):
            for b, tb in active[i + 1:]:
                d = abs(a - b)
                if min(d, N - d) <= R:
                    assert ta == tb


def test_busy_counts_helper():
    tx = np.zeros(20, bool)
    tx[[0, 10]] = True
    b = busy_counts(tx, 2)
    assert b.tolist() == [0, 1, 1, 0, 0, 0, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1]
    assert busy_counts(np.zeros(9, bool), 2).sum() == 0


def test_classify_isolated_and_overlap():
    N, L, R = 30, 4, 2
    bursts = classify_bursts(np.array([[10, 5]]), N, L, R, (0, 100))
    hit = [i for i, b in enumerate(bursts) if b]
    assert hit == [3, 4, 6, 7]
    assert all(b[0].interference_free and b[0].end - b[0].start + 1 == L for b in (bursts[i] for i in hit))
    two = classify_bursts(np.array([[10, 5], [10, 9]]), N, L, R, (0, 100))
    assert not two[7][0].interference_free and two[7][0].frames == 2
    assert two[3][0].interference_free
    assert classify_bursts(np.array([[10, 5]]), N, L, R, (11, 100))[3] == []


@pytest.mark.parametrize("p, seed", [(0.05, 3), (0.2, 4), (0.4, 8)])
def test_classify_matches_kernel(p, seed):
    cfg = SimConfig(p, N=60, L=5, R=4, warmup_slots=100, measure_slots=1500, seed=seed, n_batches=3, trace=True)
    r = run_simulation(cfg, "python")
    T = cfg.warmup_slots + cfg.measure_slots
    bursts = classify_bursts(r.raw["trace_starts"], cfg.N, cfg.L, cfg.R, (cfg.warmup_slots, T - 2))
    flat = [b for per in bursts for b in per]
    burst = r.raw["burst"].sum(axis=0)
    assert len(flat) == burst[0]
    assert sum(b.end - b.start + 1 for b in flat) == burst[1]
    assert sum(b.consecutive for b in flat) == burst[2]
    assert sum(b.interference_free for b in flat) == burst[3]
    d = np.zeros(cfg.R + 1, np.int64)
    for nb, per in enumerate(bursts):
        for b in per:
            if b.interference_free:
                x = abs(b.src - nb)
                d[min(x, cfg.N - x)] += 1
    assert np.array_equal(d[1:], r.drx_if_counts)


def test_snapshot_spatial():
    s = np.full(50, IDLE)
    s[[3, 20]] = TX
    s[[2, 4, 19, 21]] = BUSY
    snap = snapshot_spatial(s)
    assert sorted(snap.dtx.tolist()) == [17, 33]
    assert snap.dtx.sum() == 50
    assert sorted(snap.df.tolist()) == [14, 30]
    quiet = snapshot_spatial(np.full(50, IDLE))
    assert quiet.ring_idle and quiet.df.size == 0 and quiet.dtx.size == 0
    one = np.full(10, BUSY)
    one[0] = TX
    assert snapshot_spatial(one).dtx.size == 0


def test_snapshot_matches_kernel_histograms():
    cfg = small(0.1, trace=True, chi_stride=1)
    r = run_simulation(cfg)
    dtx = np.zeros(cfg.N + 1, np.int64)
    df = np.zeros(cfg.N + 1, np.int64)
    for row in r.raw["trace_status"]:
        s = snapshot_spatial(row)
        np.add.at(dtx, s.dtx, 1)
        np.add.at(df, s.df, 1)
    assert np.array_equal(dtx[1:], r.dtx_counts)
    assert np.array_equal(df, r.df_counts)
    assert np.array_equal(r.df_counts, r.df_thin_counts)


def test_double_peak_at_high_load():
    rep = run_simulation(SimConfig(0.34, warmup_slots=50000, measure_slots=40000, seed=1))
    f = rep.dtx_pmf
    assert f[0] > f[1]
    assert f[16] > f[15] and f[16] > f[17]
    assert abs(f.sum() - 1) < 1e-12


@pytest.mark.parametrize("kw", [
    dict(p_tx=0.0), dict(p_tx=1.0), dict(p_tx=0.1, N=10), dict(p_tx=0.1, warmup_slots=0),
    dict(p_tx=0.1, measure_slots=0), dict(p_tx=0.1, n_batches=1), dict(p_tx=0.1, seed=-1),
    dict(p_tx=0.1, seed=2**64), dict(p_tx=0.1, chi_stride=0), dict(p_tx=0.1, L=0),
])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        SimConfig(**kw)


def test_json_and_csv():
    r = run_simulation(small())
    d = json.loads(r.to_json())
    assert d["seed"] == 11 and d["backend"] in ("python", "cython")
    assert d["estimates"]["pi_I"]["mean"] == r.pi_I.mean
    assert d["config"]["N"] == 72
    text = r.histogram_csv("dtx")
    rows = text.splitlines()
    assert rows[0] == "k,count,probability"
    total = sum(int(x.split(",")[1]) for x in rows[1:])
    assert total == r.dtx_counts.sum()
    assert sum(float(x.split(",")[2]) for x in rows[1:]) == pytest.approx(1)
    assert r.p_OF_hat > 0
    with pytest.raises(KeyError):
        r.histogram_csv("nope")


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernel_for("fortran")


def test_backend_env_fallback():
    code = "import hidden_csma.simulator as s; print(s.BACKEND)"
    env = dict(os.environ, HIDDEN_CSMA_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
