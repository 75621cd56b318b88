"""Pure-Python ring simulation kernel.

Reference implementation of the slot loop; the compiled kernel follows it
step for step and must produce identical counters for the same seed.

Slot t is processed in four phases:

A. stations that sensed idle in slot t-1 count down their geometric
   idle budget; those reaching zero start transmitting in slot t;
B. frames whose last slot was t-1 are removed from their neighbours'
   busy counters, and receivers whose burst ended with them are marked;
C. new frames are added to the busy counters of the 2R neighbours and
   attached to the receivers' bursts;
D. per-station status for slot t is classified and statistics recorded.

Every counter is an integer so that both kernels agree bitwise.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
IDLE, TX, BUSY = 0, 1, 2
GEOM_CAP = 4.0e18


def _splitmix64(x: int):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256ss:
    """xoshiro256** seeded through splitmix64."""

    name = "xoshiro256**/splitmix64"

    def __init__(self, seed: int):
        x = seed & MASK64
        s = []
        for _ in range(4):
            x, z = _splitmix64(x)
            s.append(z)
        self.s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)


def geometric(rng: Xoshiro256ss, log_q: float) -> int:
    """Trials up to and including the first success, log_q = log1p(-p)."""
    u = rng.uniform()
    x = math.log(1.0 - u) / log_q
    if x > GEOM_CAP:
        x = GEOM_CAP
    return 1 + int(math.floor(x))


def alloc_counters(N: int, R: int, B: int) -> dict:
    return {
        "occ": np.zeros((B, 3), np.int64),      # idle, tx, busy station-slots
        "ti": np.zeros((B, 2), np.int64),       # idle runs: count, total length
        "trb": np.zeros((B, 2), np.int64),      # busy runs
        "txp": np.zeros((B, 2), np.int64),      # transmission-start intervals
        "rxp": np.zeros((B, 2), np.int64),      # burst-start intervals
        "burst": np.zeros((B, 4), np.int64),    # count, total length, consecutive, single-frame
        "dtx": np.zeros(N + 1, np.int64),
        "df": np.zeros(N + 1, np.int64),
        "df_thin": np.zeros(N + 1, np.int64),
        "drx_if": np.zeros(R + 1, np.int64),
        "misc": np.zeros(8, np.int64),
    }


# misc slots
RING_IDLE, DTX_SLOTS, TX_STARTS, BAD_TX_RUNS, SYNC_VIOLATIONS, BUSY_MISMATCH, DF_SLOTS, THIN_SLOTS = range(8)


def run_kernel(N, L, R, p_tx, warmup, measure, seed, n_batches=20, chi_stride=64,
               check_busy=False, trace=False):
    T = warmup + measure
    B = n_batches
    rng = Xoshiro256ss(seed)
    log_q = math.log1p(-p_tx)
    c = alloc_counters(N, R, B)
    occ, ti, trb, txp, rxp, burst = c["occ"], c["ti"], c["trb"], c["txp"], c["rxp"], c["burst"]
    dtx_h, df_h, df_thin, drx_if, misc = c["dtx"], c["df"], c["df_thin"], c["drx_if"], c["misc"]

    cd = np.empty(N, np.int64)
    for s in range(N):
        cd[s] = geometric(rng, log_q)
    txflag = np.zeros(N, np.int64)
    busy = np.zeros(N, np.int64)
    cur = np.zeros(N, np.int64)          # status of the run in progress
    run_start = np.zeros(N, np.int64)
    prev_txs = np.full(N, -1, np.int64)
    prev_bs = np.full(N, -1, np.int64)
    b_start = np.full(N, -1, np.int64)
    b_max = np.full(N, -2, np.int64)
    b_frames = np.zeros(N, np.int64)
    b_src = np.zeros(N, np.int64)
    pending = np.zeros(N, np.int64)
    q_start: list[int] = []               # FIFO of (start slot, station)
    q_st: list[int] = []
    q_head = 0
    offsets = np.arange(1, R + 1)
    idx = np.arange(N)

    tr_status = np.zeros((measure, N), np.uint8) if trace else None
    tr_starts: list[tuple[int, int]] = []

    def batch_of(slot):
        return (slot - warmup) * B // measure

    def close_burst(nb, t, consecutive):
        st = int(b_start[nb])
        if st >= warmup:
            bi = batch_of(t - 1)
            burst[bi, 0] += 1
            burst[bi, 1] += t - st
            burst[bi, 2] += consecutive
            if b_frames[nb] == 1:
                burst[bi, 3] += 1
                d = abs(int(b_src[nb]) - nb)
                drx_if[min(d, N - d)] += 1

    def open_burst(nb, t, src):
        if prev_bs[nb] >= warmup and t >= warmup:
            bi = batch_of(t)
            rxp[bi, 0] += 1
            rxp[bi, 1] += t - prev_bs[nb]
        prev_bs[nb] = t
        b_start[nb] = t
        b_max[nb] = t + L - 1
        b_frames[nb] = 1
        b_src[nb] = src

    for t in range(T):
        # A
        elig = (txflag == 0) & (busy == 0)
        cd[elig] -= 1
        starters = np.flatnonzero(elig & (cd == 0))
        for s in starters:
            cd[s] = geometric(rng, log_q)
        # B
        pend_list = []
        while q_head < len(q_start) and q_start[q_head] == t - L:
            e = q_st[q_head]
            q_head += 1
            txflag[e] = 0
            for o in offsets:
                for nb in ((e + o) % N, (e - o) % N):
                    busy[nb] -= 1
                    if b_max[nb] == t - 1 and not pending[nb]:
                        pending[nb] = 1
                        pend_list.append(nb)
        if q_head > 4096:
            del q_start[:q_head]
            del q_st[:q_head]
            q_head = 0
        # C
        for s in starters:
            if busy[s] != 0:
                misc[SYNC_VIOLATIONS] += 1
        for s in starters:
            s = int(s)
            txflag[s] = 1
            q_start.append(t)
            q_st.append(s)
            if t >= warmup:
                misc[TX_STARTS] += 1
                if prev_txs[s] >= warmup:
                    bi = batch_of(t)
                    txp[bi, 0] += 1
                    txp[bi, 1] += t - prev_txs[s]
            prev_txs[s] = t
            if trace and t >= warmup - L:
                tr_starts.append((t, s))
        for s in starters:
            s = int(s)
            for o in offsets:
                for nb in ((s + o) % N, (s - o) % N):
                    busy[nb] += 1
                    if txflag[nb]:
                        continue
                    if pending[nb]:
                        close_burst(nb, t, 1)
                        pending[nb] = 0
                        open_burst(nb, t, s)
                    elif b_max[nb] >= t:
                        b_frames[nb] += 1
                        b_max[nb] = t + L - 1
                    else:
                        open_burst(nb, t, s)
        for nb in pend_list:
            if pending[nb]:
                close_burst(nb, t, 0)
                pending[nb] = 0
        if check_busy:
            tx_pos = np.flatnonzero(txflag)
            if tx_pos.size:
                dist = np.abs(idx[:, None] - tx_pos[None, :])
                dist = np.minimum(dist, N - dist)
                brute = ((dist >= 1) & (dist <= R)).sum(axis=1)
            else:
                brute = np.zeros(N, np.int64)
            misc[BUSY_MISMATCH] += int(np.count_nonzero(brute != busy))
        # D
        status = np.where(txflag == 1, TX, np.where(busy > 0, BUSY, IDLE))
        changed = np.flatnonzero(status != cur)
        if changed.size:
            old = cur[changed]
            starts = run_start[changed]
            lengths = t - starts
            counted = starts >= warmup
            if np.any(counted):
                bi = batch_of(t - 1)
                m_idle = counted & (old == IDLE)
                m_busy = counted & (old == BUSY)
                m_tx = counted & (old == TX)
                ti[bi, 0] += int(m_idle.sum())
                ti[bi, 1] += int(lengths[m_idle].sum())
                trb[bi, 0] += int(m_busy.sum())
                trb[bi, 1] += int(lengths[m_busy].sum())
                misc[BAD_TX_RUNS] += int(np.count_nonzero(lengths[m_tx] != L))
            cur[changed] = status[changed]
            run_start[changed] = t
        if t < warmup:
            continue
        bi = batch_of(t)
        n_tx = int(np.count_nonzero(status == TX))
        n_busy = int(np.count_nonzero(status == BUSY))
        occ[bi, 0] += N - n_tx - n_busy
        occ[bi, 1] += n_tx
        occ[bi, 2] += n_busy
        if trace:
            tr_status[t - warmup] = status
        # spatial snapshot
        if n_tx >= 2:
            pos = np.flatnonzero(status == TX)
            gaps = np.diff(pos)
            dtx_h += np.bincount(gaps, minlength=N + 1)[: N + 1]
            dtx_h[N - pos[-1] + pos[0]] += 1
            misc[DTX_SLOTS] += 1
        idle = status == IDLE
        n_idle = N - n_tx - n_busy
        thin = (t - warmup) % chi_stride == 0
        if n_idle == N:
            misc[RING_IDLE] += 1
        elif n_idle > 0:
            first = int(np.flatnonzero(~idle)[0])
            rolled = np.roll(idle, -first).astype(np.int8)
            edges = np.diff(np.concatenate(([0], rolled, [0])))
            lens = np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)
            h = np.bincount(lens, minlength=N + 1)[: N + 1]
            df_h += h
            misc[DF_SLOTS] += 1
            if thin:
                df_thin += h
                misc[THIN_SLOTS] += 1
    out = dict(c)
    if trace:
        out["trace_status"] = tr_status
        out["trace_starts"] = np.array(tr_starts, dtype=np.int64).reshape(-1, 2)
    return out
