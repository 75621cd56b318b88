"""Steady-state performance metrics read off a solved model.

Time metrics treat the idle/non-idle alternation at a station as a renewal
process.  The interference-free probability follows a reception from its
first slot through the V / VBE / VBL paths of the time chain, combined with
the same-side interference bound from the d_TX law.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .params import ModelParams
from .solver import SolvedModel, solve_model
from .space_chain import dtx_pmf, dtx_survival
from .support import v_transitions_at_distance

DEGENERATE_DENOM = 1e-14
DEGENERATE_P_RX = 1e-300
SYNC_THRESHOLD = 1e-3


class DegenerateRegime(ArithmeticError):
    pass


@dataclass(frozen=True)
class TimeMetrics:
    T_I_mean: float
    T_NI_mean: float
    T_TX: int
    T_NTX_mean: float
    T_TXP_mean: float
    T_RB_mean: float
    T_RXB_mean: float
    T_NRX_mean: float
    T_RXP_mean: float
    p_ConRX: float
    # second route to T_NI, through busy-period occupancy
    T_NI_via_busy: float
    degenerate: Optional[str] = None


def _state_prob(model: SolvedModel, kind: str, l: int, n: int) -> float:
    return model.time_stationary.of(model.time_chain, kind, l, n)


def time_metrics(model: SolvedModel) -> TimeMetrics:
    s = model.support
    L = model.params.L
    ts = model.time_stationary
    pi_I, pi_TX, pi_RB = ts.pi_I, ts.pi_TX, ts.pi_RB
    T_I = 1.0 / (1.0 - s.pII)
    T_NI = T_I * (1.0 - pi_I) / pi_I
    T_NTX = L * (1.0 / pi_TX - 1.0)
    T_TXP = L + T_NTX
    busy_start = 1.0 - s.pII - s.pTXI
    degenerate = None
    if busy_start < DEGENERATE_DENOM:
        degenerate = "busy-period start probability below 1e-14"
        T_RB = float("nan")
        T_NI_busy = float("nan")
    else:
        T_RB = ((1.0 - s.pII) * T_NI - s.pTXI * L) / busy_start
        # mean busy length from occupancy: pi_RB over the busy-start rate
        T_RB_occ = pi_RB / (pi_I * busy_start)
        T_NI_busy = (busy_start * T_RB_occ + s.pTXI * L) / (1.0 - s.pII)
    v_end = _state_prob(model, "V", L, L)
    b_end = _state_prob(model, "B", L, L)
    vbe_end = _state_prob(model, "VBE", L, L)
    ends = b_end + v_end + vbe_end
    p_con = v_end / ends * s.pBV if ends > 0 else 0.0
    T_RXB = T_RB * (1.0 - p_con)
    idle_or_tx = pi_I + pi_TX
    T_NRX = idle_or_tx / (1.0 - idle_or_tx) * T_RB
    T_RXP = (1.0 - p_con) * (T_RXB + T_NRX) + p_con * T_RXB
    return TimeMetrics(
        T_I_mean=T_I, T_NI_mean=T_NI, T_TX=L, T_NTX_mean=T_NTX, T_TXP_mean=T_TXP,
        T_RB_mean=T_RB, T_RXB_mean=T_RXB, T_NRX_mean=T_NRX, T_RXP_mean=T_RXP,
        p_ConRX=p_con, T_NI_via_busy=T_NI_busy, degenerate=degenerate,
    )


@dataclass(frozen=True)
class InterferenceReport:
    p_RX: float
    p_IF: float
    f_dRX_given_IF: np.ndarray
    p_IFS: np.ndarray
    f_dRX_given_VB: np.ndarray
    degenerate: Optional[str] = None


def _vb_distance_law(params: ModelParams, p_of: float) -> np.ndarray:
    """Distance to the nearer transmitter for a receiver inside a VBE or VBL
    area: proportional to Pr{R+k+1 <= d_TX <= 2R+1}."""
    R = params.R
    band = dtx_pmf(params, p_of, np.arange(R + 2, 2 * R + 2))
    # tail[k-1] = sum of band entries for d_TX >= R+k+1
    tail = np.cumsum(band[::-1])[::-1]
    total = tail.sum()
    return tail / total if total > 0 else np.full(R, 1.0 / R)


def interference_free(model: SolvedModel) -> InterferenceReport:
    p = model.params
    s = model.support
    L, R, f = p.L, p.R, model.p_OF
    pi_I = model.time_stationary.pi_I
    pi_vll = _state_prob(model, "V", L, L)

    p_rx = pi_I * (1.0 - s.pII - s.pTXI) + pi_vll * s.pBV
    d = np.arange(1, R + 1)
    p_ifs = np.array([dtx_survival(p, f, R - k + 1) for k in d])
    f_vb = _vb_distance_law(p, f)
    if p_rx < DEGENERATE_P_RX:
        return InterferenceReport(p_rx, 0.0, np.zeros(R), p_ifs, f_vb, "reception start probability below 1e-300")

    w_I = pi_I * (s.pVI + s.pVBLI / L) + pi_vll * s.pBV
    w_II = pi_I * s.pVBEI
    w_III = pi_I * s.pVBLI / L
    f_v = 1.0 / R
    per_d = np.empty(R)
    for i, k in enumerate(d):
        vt = v_transitions_at_distance(p.p_tx, R, f, int(k))
        pv, pvbe = vt.pVV_d, vt.pVBEV_d
        powers = pv ** np.arange(L)           # pv**0 .. pv**(L-1)
        partial = np.cumsum(powers)           # partial[j] = sum_{i<=j} pv**i
        case1 = powers[L - 1] + (pvbe * partial[L - 2] if L >= 2 else 0.0)
        case3 = 0.0
        for l in range(1, L):
            reach_v = powers[L - 1 - l]
            reach_vbe = pvbe * partial[L - 2 - l] if l <= L - 2 else 0.0
            case3 += reach_v + reach_vbe
        per_d[i] = p_ifs[i] * (w_I * case1 * f_v + w_II * f_vb[i] + w_III * case3 * f_vb[i])
    p_if = float(math.fsum(per_d) / p_rx)
    cond = per_d / (p_if * p_rx) if p_if > 0 else np.zeros(R)
    return InterferenceReport(p_rx, p_if, cond, p_ifs, f_vb)


@dataclass(frozen=True)
class GoodputReport:
    G: float
    sync_point_p_tx: Optional[float] = None
    sync_regime: bool = False
    degenerate: Optional[str] = None


def goodput(model: SolvedModel, tm: TimeMetrics | None = None, ir: InterferenceReport | None = None) -> GoodputReport:
    tm = tm or time_metrics(model)
    ir = ir or interference_free(model)
    reason = tm.degenerate or ir.degenerate
    if reason is None and not (math.isfinite(tm.T_RXP_mean) and tm.T_RXP_mean > 0):
        reason = "non-finite reception period"
    if reason is not None:
        return GoodputReport(G=0.0, sync_regime=True, degenerate=reason)
    G = model.params.L * ir.p_IF / tm.T_RXP_mean
    G = min(max(G, 0.0), 1.0)
    return GoodputReport(G=G, sync_regime=G < SYNC_THRESHOLD)


def goodput_at(p_tx: float, L: int, R: int) -> float:
    return goodput(solve_model(ModelParams(p_tx, L, R))).G


def find_sync_point(L: int, R: int, grid: Iterable[float], threshold: float = SYNC_THRESHOLD) -> Optional[float]:
    """First p_tx past the goodput peak where G drops below ``threshold``,
    refined by bisection to a hundredth of the local grid step."""
    xs = np.asarray(list(grid), dtype=float)
    if xs.size < 16 or np.any(np.diff(xs) <= 0):
        raise ValueError("grid must be strictly ascending with at least 16 points")
    gs = np.array([goodput_at(float(x), L, R) for x in xs])
    peak = int(np.argmax(gs))
    below = np.flatnonzero(gs[peak:] < threshold)
    if below.size == 0:
        return None
    i = peak + int(below[0])
    if i == 0:
        return float(xs[0])
    lo, hi = float(xs[i - 1]), float(xs[i])
    width = (hi - lo) / 100.0
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if goodput_at(mid, L, R) < threshold:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class MetricsReport:
    params: ModelParams
    p_OF: float
    pi_I: float
    pi_TX: float
    pi_RB: float
    time: TimeMetrics
    interference: InterferenceReport
    goodput: GoodputReport
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        it = self.interference
        return {
            "p_tx": self.params.p_tx,
            "L": self.params.L,
            "R": self.params.R,
            "p_OF": self.p_OF,
            "pi_I": self.pi_I,
            "pi_TX": self.pi_TX,
            "pi_RB": self.pi_RB,
            "time": asdict(self.time),
            "interference": {
                "p_RX": it.p_RX,
                "p_IF": it.p_IF,
                "f_dRX_given_IF": it.f_dRX_given_IF.tolist(),
                "degenerate": it.degenerate,
            },
            "goodput": asdict(self.goodput),
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def metrics_report(model: SolvedModel) -> MetricsReport:
    tm = time_metrics(model)
    ir = interference_free(model)
    gp = goodput(model, tm, ir)
    d = model.diagnostics
    diag = {
        "residual": d.residual,
        "bracket": list(d.bracket),
        "iterations": d.iterations,
        "roots": list(d.roots),
        "multiple_roots": d.multiple_roots,
    }
    ts = model.time_stationary
    return MetricsReport(model.params, model.p_OF, ts.pi_I, ts.pi_TX, ts.pi_RB, tm, ir, gp, diag)
