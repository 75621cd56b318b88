# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ring simulation kernel.

Follows ``_pykernel.run_kernel`` phase for phase (see its docstring); the
two must agree on every counter for the same seed.
"""
import numpy as np
from libc.math cimport log, log1p, floor
from libc.stdint cimport uint64_t, int64_t


cdef double GEOM_CAP = 4.0e18

cdef struct Rng:
    uint64_t s0, s1, s2, s3

cdef inline uint64_t rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))

cdef inline uint64_t splitmix(uint64_t* x) nogil:
    x[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = x[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)

cdef inline uint64_t next_u64(Rng* r) nogil:
    cdef uint64_t result = rotl(r.s1 * 5, 7) * 9
    cdef uint64_t t = r.s1 << 17
    r.s2 ^= r.s0
    r.s3 ^= r.s1
    r.s1 ^= r.s2
    r.s0 ^= r.s3
    r.s2 ^= t
    r.s3 = rotl(r.s3, 45)
    return result

cdef inline int64_t geometric(Rng* r, double log_q) nogil:
    cdef double u = (next_u64(r) >> 11) * (1.0 / 9007199254740992.0)
    cdef double x = log(1.0 - u) / log_q
    if x > GEOM_CAP:
        x = GEOM_CAP
    return 1 + <int64_t>floor(x)


def rng_uniforms(uint64_t seed, int n):
    """First n uniforms of the generator, for cross-checking the RNG."""
    cdef Rng r
    cdef uint64_t x = seed
    r.s0 = splitmix(&x); r.s1 = splitmix(&x); r.s2 = splitmix(&x); r.s3 = splitmix(&x)
    out = np.empty(n)
    cdef double[:] o = out
    cdef int i
    for i in range(n):
        o[i] = (next_u64(&r) >> 11) * (1.0 / 9007199254740992.0)
    return out


def run_kernel(int64_t N, int64_t L, int64_t R, double p_tx, int64_t warmup, int64_t measure,
               uint64_t seed, int64_t n_batches=20, int64_t chi_stride=64,
               bint check_busy=False, bint trace=False):
    from ._pykernel import alloc_counters
    cdef int64_t T = warmup + measure
    cdef int64_t B = n_batches
    cdef Rng rng
    cdef uint64_t sx = seed
    rng.s0 = splitmix(&sx); rng.s1 = splitmix(&sx); rng.s2 = splitmix(&sx); rng.s3 = splitmix(&sx)
    cdef double log_q = log1p(-p_tx)

    c = alloc_counters(N, R, B)
    cdef int64_t[:, :] occ = c["occ"]
    cdef int64_t[:, :] ti = c["ti"]
    cdef int64_t[:, :] trb = c["trb"]
    cdef int64_t[:, :] txp = c["txp"]
    cdef int64_t[:, :] rxp = c["rxp"]
    cdef int64_t[:, :] burst = c["burst"]
    cdef int64_t[:] dtx_h = c["dtx"]
    cdef int64_t[:] df_h = c["df"]
    cdef int64_t[:] df_thin = c["df_thin"]
    cdef int64_t[:] drx_if = c["drx_if"]
    cdef int64_t[:] misc = c["misc"]

    cdef int64_t[:] cd = np.empty(N, np.int64)
    cdef int64_t[:] txflag = np.zeros(N, np.int64)
    cdef int64_t[:] busy = np.zeros(N, np.int64)
    cdef int64_t[:] cur = np.zeros(N, np.int64)
    cdef int64_t[:] run_start = np.zeros(N, np.int64)
    cdef int64_t[:] prev_txs = np.full(N, -1, np.int64)
    cdef int64_t[:] prev_bs = np.full(N, -1, np.int64)
    cdef int64_t[:] b_start = np.full(N, -1, np.int64)
    cdef int64_t[:] b_max = np.full(N, -2, np.int64)
    cdef int64_t[:] b_frames = np.zeros(N, np.int64)
    cdef int64_t[:] b_src = np.zeros(N, np.int64)
    cdef int64_t[:] pending = np.zeros(N, np.int64)
    cdef int64_t[:] starters = np.empty(N, np.int64)
    cdef int64_t[:] pend_list = np.empty(N, np.int64)
    cdef int64_t[:] status = np.zeros(N, np.int64)
    cdef int64_t[:] pos = np.empty(N, np.int64)
    cdef int64_t[:] brute = np.zeros(N, np.int64)
    # FIFO ring of active transmissions; at most N are active at once
    cdef int64_t[:] q_start = np.empty(N + 1, np.int64)
    cdef int64_t[:] q_st = np.empty(N + 1, np.int64)
    cdef int64_t q_head = 0, q_len = 0, qcap = N + 1

    tr_status_arr = np.zeros((measure if trace else 0, N), np.uint8)
    cdef unsigned char[:, :] tr_status = tr_status_arr
    tr_starts = []

    cdef int64_t t, s, i, j, o, nb, e, nst, npend, bi, st, d, old, length
    cdef int64_t n_tx, n_busy, n_idle, cnt, first, run, k, slot
    cdef bint thin

    for s in range(N):
        cd[s] = geometric(&rng, log_q)

    for t in range(T):
        # A
        nst = 0
        for s in range(N):
            if txflag[s] == 0 and busy[s] == 0:
                cd[s] -= 1
                if cd[s] == 0:
                    starters[nst] = s
                    nst += 1
        for i in range(nst):
            cd[starters[i]] = geometric(&rng, log_q)
        # B
        npend = 0
        while q_len > 0 and q_start[q_head] == t - L:
            e = q_st[q_head]
            q_head = (q_head + 1) % qcap
            q_len -= 1
            txflag[e] = 0
            for o in range(1, R + 1):
                for j in range(2):
                    nb = (e + o) % N if j == 0 else (e - o + N) % N
                    busy[nb] -= 1
                    if b_max[nb] == t - 1 and pending[nb] == 0:
                        pending[nb] = 1
                        pend_list[npend] = nb
                        npend += 1
        # C
        for i in range(nst):
            if busy[starters[i]] != 0:
                misc[4] += 1
        for i in range(nst):
            s = starters[i]
            txflag[s] = 1
            q_start[(q_head + q_len) % qcap] = t
            q_st[(q_head + q_len) % qcap] = s
            q_len += 1
            if t >= warmup:
                misc[2] += 1
                if prev_txs[s] >= warmup:
                    bi = (t - warmup) * B // measure
                    txp[bi, 0] += 1
                    txp[bi, 1] += t - prev_txs[s]
            prev_txs[s] = t
            if trace and t >= warmup - L:
                tr_starts.append((t, s))
        for i in range(nst):
            s = starters[i]
            for o in range(1, R + 1):
                for j in range(2):
                    nb = (s + o) % N if j == 0 else (s - o + N) % N
                    busy[nb] += 1
                    if txflag[nb]:
                        continue
                    if pending[nb]:
                        _close(nb, t, 1, warmup, measure, B, N, b_start, b_frames, b_src, burst, drx_if)
                        pending[nb] = 0
                        _open(nb, t, s, warmup, measure, B, L, prev_bs, b_start, b_max, b_frames, b_src, rxp)
                    elif b_max[nb] >= t:
                        b_frames[nb] += 1
                        b_max[nb] = t + L - 1
                    else:
                        _open(nb, t, s, warmup, measure, B, L, prev_bs, b_start, b_max, b_frames, b_src, rxp)
        for i in range(npend):
            nb = pend_list[i]
            if pending[nb]:
                _close(nb, t, 0, warmup, measure, B, N, b_start, b_frames, b_src, burst, drx_if)
                pending[nb] = 0
        if check_busy:
            for s in range(N):
                brute[s] = 0
            for s in range(N):
                if txflag[s]:
                    for o in range(1, R + 1):
                        brute[(s + o) % N] += 1
                        brute[(s - o + N) % N] += 1
            for s in range(N):
                if brute[s] != busy[s]:
                    misc[5] += 1
        # D
        n_tx = 0
        n_busy = 0
        for s in range(N):
            if txflag[s] == 1:
                status[s] = 1
                n_tx += 1
            elif busy[s] > 0:
                status[s] = 2
                n_busy += 1
            else:
                status[s] = 0
            if status[s] != cur[s]:
                st = run_start[s]
                if st >= warmup:
                    bi = (t - 1 - warmup) * B // measure
                    old = cur[s]
                    length = t - st
                    if old == 0:
                        ti[bi, 0] += 1
                        ti[bi, 1] += length
                    elif old == 2:
                        trb[bi, 0] += 1
                        trb[bi, 1] += length
                    elif length != L:
                        misc[3] += 1
                cur[s] = status[s]
                run_start[s] = t
        if t < warmup:
            continue
        bi = (t - warmup) * B // measure
        n_idle = N - n_tx - n_busy
        occ[bi, 0] += n_idle
        occ[bi, 1] += n_tx
        occ[bi, 2] += n_busy
        if trace:
            for s in range(N):
                tr_status[t - warmup, s] = <unsigned char>status[s]
        if n_tx >= 2:
            cnt = 0
            for s in range(N):
                if status[s] == 1:
                    pos[cnt] = s
                    cnt += 1
            for i in range(1, cnt):
                dtx_h[pos[i] - pos[i - 1]] += 1
            dtx_h[N - pos[cnt - 1] + pos[0]] += 1
            misc[1] += 1
        thin = (t - warmup) % chi_stride == 0
        if n_idle == N:
            misc[0] += 1
        elif n_idle > 0:
            first = 0
            while status[first] == 0:
                first += 1
            run = 0
            for k in range(1, N + 1):
                s = (first + k) % N
                if status[s] == 0:
                    run += 1
                elif run > 0:
                    df_h[run] += 1
                    if thin:
                        df_thin[run] += 1
                    run = 0
            misc[6] += 1
            if thin:
                misc[7] += 1
    out = dict(c)
    if trace:
        out["trace_status"] = tr_status_arr
        out["trace_starts"] = np.array(tr_starts, dtype=np.int64).reshape(-1, 2)
    return out


cdef inline void _close(int64_t nb, int64_t t, int64_t consecutive, int64_t warmup, int64_t measure,
                        int64_t B, int64_t N, int64_t[:] b_start, int64_t[:] b_frames,
                        int64_t[:] b_src, int64_t[:, :] burst, int64_t[:] drx_if):
    cdef int64_t st = b_start[nb]
    cdef int64_t bi, d
    if st >= warmup:
        bi = (t - 1 - warmup) * B // measure
        burst[bi, 0] += 1
        burst[bi, 1] += t - st
        burst[bi, 2] += consecutive
        if b_frames[nb] == 1:
            burst[bi, 3] += 1
            d = b_src[nb] - nb
            if d < 0:
                d = -d
            if N - d < d:
                d = N - d
            drx_if[d] += 1


cdef inline void _open(int64_t nb, int64_t t, int64_t src, int64_t warmup, int64_t measure,
                       int64_t B, int64_t L, int64_t[:] prev_bs, int64_t[:] b_start,
                       int64_t[:] b_max, int64_t[:] b_frames, int64_t[:] b_src,
                       int64_t[:, :] rxp):
    cdef int64_t bi
    if prev_bs[nb] >= warmup and t >= warmup:
        bi = (t - warmup) * B // measure
        rxp[bi, 0] += 1
        rxp[bi, 1] += t - prev_bs[nb]
    prev_bs[nb] = t
    b_start[nb] = t
    b_max[nb] = t + L - 1
    b_frames[nb] = 1
    b_src[nb] = src
