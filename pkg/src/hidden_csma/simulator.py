"""Slotted Monte-Carlo simulation of CSMA broadcast on a ring of N stations.

The hot loop lives in a compiled kernel (``_ckernel``) with a pure-Python
twin (``_pykernel``) used when the extension is unavailable or when
``HIDDEN_CSMA_BACKEND=python`` is set.  Both consume the same generator
stream and return identical integer counters.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import secrets
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import _pykernel
from ._pykernel import IDLE, TX, BUSY, Xoshiro256ss, geometric

try:
    if os.environ.get("HIDDEN_CSMA_BACKEND", "").lower() == "python":
        raise ImportError("python backend requested")
    from . import _ckernel as _kernel

    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on the build
    _kernel = _pykernel
    BACKEND = "python"

GENERATOR = Xoshiro256ss.name


def kernel_for(backend: str | None):
    if backend is None:
        return _kernel
    if backend == "python":
        return _pykernel
    if backend == "cython":
        from . import _ckernel

        return _ckernel
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class SimConfig:
    p_tx: float
    N: int = 800
    L: int = 32
    R: int = 16
    warmup_slots: int = 50_000
    measure_slots: int = 500_000
    seed: Optional[int] = None
    n_batches: int = 20
    # d_F snapshots for the goodness-of-fit test are taken this many slots apart
    chi_stride: int = 64
    check_busy: bool = False
    trace: bool = False

    def __post_init__(self):
        problems = []
        if not (0.0 < self.p_tx < 1.0):
            problems.append("p_tx must lie in (0, 1)")
        if self.L < 1 or self.R < 1:
            problems.append("L and R must be >= 1")
        if self.N < 4 * self.R + 4:
            problems.append(f"N must be >= 4R + 4 = {4 * self.R + 4}")
        if self.warmup_slots < 1 or self.measure_slots < 1:
            problems.append("warmup and measure windows must be >= 1 slot")
        if self.n_batches < 2 or self.measure_slots < self.n_batches:
            problems.append("need at least 2 batches and one slot per batch")
        if self.chi_stride < 1:
            problems.append("chi_stride must be >= 1")
        if self.seed is not None and not (0 <= self.seed < 2**64):
            problems.append("seed must be a 64-bit unsigned integer")
        if problems:
            from .params import ParameterError

            raise ParameterError(problems)

    def with_seed(self) -> "SimConfig":
        """Copy with a concrete seed, drawing one from OS entropy if unset."""
        if self.seed is not None:
            return self
        return replace(self, seed=secrets.randbits(64))


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    count: int

    def to_dict(self):
        return {"mean": self.mean, "se": self.se, "count": self.count}


@dataclass
class SimReport:
    config: SimConfig
    seed: int
    generator: str
    backend: str
    pi_I: Estimate
    pi_TX: Estimate
    pi_RB: Estimate
    T_I: Estimate
    T_RB: Estimate
    T_RXB: Estimate
    T_RXP: Estimate
    T_TXP: Estimate
    p_IF: Estimate
    p_ConRX: Estimate
    G: Estimate
    dtx_counts: np.ndarray
    df_counts: np.ndarray
    df_thin_counts: np.ndarray
    drx_if_counts: np.ndarray
    counts: dict
    raw: dict = field(default=None, repr=False)

    @property
    def dtx_pmf(self) -> np.ndarray:
        return _normalise(self.dtx_counts)

    @property
    def df_pmf(self) -> np.ndarray:
        return _normalise(self.df_counts)

    @property
    def p_OF_hat(self) -> float:
        """Geometric fit parameter of d_F: the reciprocal sample mean."""
        k = np.arange(self.df_counts.size)
        n = self.df_counts.sum()
        return float(n / (k * self.df_counts).sum()) if n else float("nan")

    def to_dict(self) -> dict:
        est = {
            k: getattr(self, k).to_dict()
            for k in ("pi_I", "pi_TX", "pi_RB", "T_I", "T_RB", "T_RXB", "T_RXP", "T_TXP", "p_IF", "p_ConRX", "G")
        }
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "seed": self.seed,
            "generator": self.generator,
            "backend": self.backend,
            "estimates": est,
            "p_OF_hat": self.p_OF_hat,
            "counts": self.counts,
            "dtx_counts": self.dtx_counts.tolist(),
            "df_counts": self.df_counts.tolist(),
            "df_thin_counts": self.df_thin_counts.tolist(),
            "drx_if_counts": self.drx_if_counts.tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def histogram_csv(self, which: str) -> str:
        counts = {"dtx": self.dtx_counts, "df": self.df_counts, "df_thin": self.df_thin_counts}[which]
        total = counts.sum()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "count", "probability"])
        for k in np.flatnonzero(counts):
            w.writerow([int(k), int(counts[k]), repr(float(counts[k] / total))])
        return buf.getvalue()


def _normalise(c: np.ndarray) -> np.ndarray:
    s = c.sum()
    return c / s if s else c.astype(float)


def _ratio_estimate(num: np.ndarray, den: np.ndarray) -> Estimate:
    """Pooled ratio with a batch-means standard error."""
    total_den = int(den.sum())
    if total_den == 0:
        return Estimate(float("nan"), float("nan"), 0)
    mean = float(num.sum() / total_den)
    ok = den > 0
    if ok.sum() >= 2:
        per = num[ok] / den[ok]
        se = float(np.std(per, ddof=1) / math.sqrt(ok.sum()))
    else:
        se = float("nan")
    return Estimate(mean, se, total_den)


def summarise(cfg: SimConfig, seed: int, raw: dict, backend: str) -> SimReport:
    occ = raw["occ"]
    slots = occ.sum(axis=1)                       # station-slots per batch
    burst = raw["burst"]
    misc = raw["misc"]
    m = _pykernel
    counts = {
        "station_slots": int(slots.sum()),
        "tx_starts": int(misc[m.TX_STARTS]),
        "bursts": int(burst[:, 0].sum()),
        "interference_free_bursts": int(burst[:, 3].sum()),
        "ring_idle_slots": int(misc[m.RING_IDLE]),
        "dtx_slots": int(misc[m.DTX_SLOTS]),
        "df_slots": int(misc[m.DF_SLOTS]),
        "df_thin_slots": int(misc[m.THIN_SLOTS]),
        "sync_violations": int(misc[m.SYNC_VIOLATIONS]),
        "bad_tx_runs": int(misc[m.BAD_TX_RUNS]),
        "busy_mismatches": int(misc[m.BUSY_MISMATCH]),
    }
    return SimReport(
        config=cfg,
        seed=seed,
        generator=GENERATOR,
        backend=backend,
        pi_I=_ratio_estimate(occ[:, 0], slots),
        pi_TX=_ratio_estimate(occ[:, 1], slots),
        pi_RB=_ratio_estimate(occ[:, 2], slots),
        T_I=_ratio_estimate(raw["ti"][:, 1], raw["ti"][:, 0]),
        T_RB=_ratio_estimate(raw["trb"][:, 1], raw["trb"][:, 0]),
        T_RXB=_ratio_estimate(burst[:, 1], burst[:, 0]),
        T_RXP=_ratio_estimate(raw["rxp"][:, 1], raw["rxp"][:, 0]),
        T_TXP=_ratio_estimate(raw["txp"][:, 1], raw["txp"][:, 0]),
        p_IF=_ratio_estimate(burst[:, 3], burst[:, 0]),
        p_ConRX=_ratio_estimate(burst[:, 2], burst[:, 0]),
        G=_ratio_estimate(cfg.L * burst[:, 3], slots),
        dtx_counts=raw["dtx"][1:].copy(),
        df_counts=raw["df"].copy(),
        df_thin_counts=raw["df_thin"].copy(),
        drx_if_counts=raw["drx_if"][1:].copy(),
        counts=counts,
        raw=raw,
    )


def run_simulation(cfg: SimConfig, backend: str | None = None) -> SimReport:
    """Run one simulation; deterministic given ``cfg.seed``."""
    cfg = cfg.with_seed()
    k = kernel_for(backend)
    raw = k.run_kernel(
        cfg.N, cfg.L, cfg.R, cfg.p_tx, cfg.warmup_slots, cfg.measure_slots, cfg.seed,
        n_batches=cfg.n_batches, chi_stride=cfg.chi_stride,
        check_busy=cfg.check_busy, trace=cfg.trace,
    )
    name = "python" if k is _pykernel else "cython"
    return summarise(cfg, cfg.seed, raw, name)


def seed_for(base: int, index: int) -> int:
    """Independent 64-bit seeds derived from a base seed."""
    return int(np.random.SeedSequence([base & (2**64 - 1), index]).generate_state(1, np.uint64)[0])


# -- single-slot reference stepper -------------------------------------------


@dataclass
class RingState:
    """Whole-ring state after slot ``t - 1`` for the reference stepper."""

    N: int
    L: int
    R: int
    p_tx: float
    t: int
    countdown: np.ndarray
    tx_start: np.ndarray        # start slot of the frame in flight, -1 if none
    status: np.ndarray          # status in slot t - 1

    @classmethod
    def initial(cls, N: int, L: int, R: int, p_tx: float, rng: Xoshiro256ss) -> "RingState":
        log_q = math.log1p(-p_tx)
        cd = np.array([geometric(rng, log_q) for _ in range(N)], dtype=np.int64)
        return cls(N, L, R, p_tx, 0, cd, np.full(N, -1, np.int64), np.zeros(N, np.int64))


def busy_counts(tx: np.ndarray, R: int) -> np.ndarray:
    """In-range transmitter count per station by a direct range scan."""
    N = tx.size
    idx = np.arange(N)
    pos = np.flatnonzero(tx)
    if pos.size == 0:
        return np.zeros(N, np.int64)
    d = np.abs(idx[:, None] - pos[None, :])
    d = np.minimum(d, N - d)
    return ((d >= 1) & (d <= R)).sum(axis=1)


def step_slot(state: RingState, rng: Xoshiro256ss) -> RingState:
    """Advance the ring by one slot.

    Stations that sensed idle in the previous slot draw their transmission
    decision together; the channel state is then recomputed from scratch.
    """
    t = state.t
    log_q = math.log1p(-state.p_tx)
    cd = state.countdown.copy()
    eligible = state.status == IDLE
    cd[eligible] -= 1
    fire = np.flatnonzero(eligible & (cd == 0))
    for s in fire:
        cd[s] = geometric(rng, log_q)
    tx_start = state.tx_start.copy()
    tx_start[(tx_start >= 0) & (t - tx_start >= state.L)] = -1
    tx_start[fire] = t
    tx = tx_start >= 0
    busy = busy_counts(tx, state.R)
    status = np.where(tx, TX, np.where(busy > 0, BUSY, IDLE))
    return RingState(state.N, state.L, state.R, state.p_tx, t + 1, cd, tx_start, status)


# -- post-processing helpers ---------------------------------------------------


@dataclass(frozen=True)
class Burst:
    start: int
    end: int
    frames: int
    src: int                 # transmitter of the first frame
    consecutive: bool        # another burst starts in the very next slot

    @property
    def interference_free(self) -> bool:
        return self.frames == 1


def classify_bursts(trace_starts: np.ndarray, N: int, L: int, R: int, window: tuple[int, int]) -> list[list[Burst]]:
    """Rebuild every station's reception bursts from the frame start list.

    A burst is a maximal group of overlapping frames heard by a station that
    is not transmitting when they begin; it ends with its last frame.
    Bursts not fully inside ``window = (first, last)`` slots are dropped.
    """
    first, last = window
    starts = sorted((int(t), int(s)) for t, s in trace_starts)
    tx_times: dict[int, list[int]] = {}
    for t, s in starts:
        tx_times.setdefault(s, []).append(t)

    def transmitting(station: int, t: int) -> bool:
        return any(t0 <= t < t0 + L for t0 in tx_times.get(station, ()))

    heard: list[list[tuple[int, int]]] = [[] for _ in range(N)]
    for t, s in starts:
        for o in range(1, R + 1):
            for nb in ((s + o) % N, (s - o) % N):
                if not transmitting(nb, t):
                    heard[nb].append((t, s))
    out: list[list[Burst]] = []
    for nb in range(N):
        frames = sorted(heard[nb])
        bursts = []
        cur = None
        for t, s in frames:
            if cur is not None and t <= cur[1]:
                cur[1] = max(cur[1], t + L - 1)
                cur[2] += 1
                continue
            if cur is not None:
                bursts.append((cur, t == cur[1] + 1))
            cur = [t, t + L - 1, 1, s]
        if cur is not None:
            bursts.append((cur, False))
        kept = []
        for (st, en, n, src), consecutive in bursts:
            if st >= first and en <= last:
                kept.append(Burst(st, en, n, src, consecutive))
        out.append(kept)
    return out


@dataclass(frozen=True)
class Snapshot:
    dtx: np.ndarray          # adjacent-transmitter gaps
    df: np.ndarray           # maximal idle run lengths
    ring_idle: bool


def snapshot_spatial(status: np.ndarray) -> Snapshot:
    """Spatial samples from one slot's status vector (ring-wrapped)."""
    status = np.asarray(status)
    N = status.size
    pos = np.flatnonzero(status == TX)
    if pos.size >= 2:
        gaps = np.append(np.diff(pos), N - pos[-1] + pos[0])
    else:
        gaps = np.zeros(0, np.int64)
    idle = status == IDLE
    if idle.all():
        return Snapshot(gaps, np.zeros(0, np.int64), True)
    if not idle.any():
        return Snapshot(gaps, np.zeros(0, np.int64), False)
    first = int(np.flatnonzero(~idle)[0])
    rolled = np.roll(idle, -first).astype(np.int8)
    edges = np.diff(np.concatenate(([0], rolled, [0])))
    runs = np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)
    return Snapshot(gaps, runs, False)
