"""The nine supporting transition probabilities of the per-station time chain.

Each probability is an expectation over the geometric law of the
interference-free run length d_F (parameter ``p_of``).  Two routes are
provided:

* :func:`support_probabilities` evaluates the summed closed forms;
* :func:`support_probabilities_by_series` sums the per-position case
  expressions against the geometric weights directly and is kept in the
  production module so the CLI can cross-check a solve.

Notation used throughout: ``q = 1 - p_tx``, ``b = 1 - p_of`` and
``a = q * b``.  ``1 - a`` is always computed as ``p_tx + q * p_of`` so it
stays accurate when both probabilities are small.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

SUM_TOL = 1e-12
_BOUND_SLACK = 1e-12

FIELDS = ("pII", "pTXI", "pVI", "pBI", "pVBLI", "pVBEI", "pBV", "pVBEV", "pVV")
IDLE_EXITS = ("pII", "pTXI", "pVI", "pBI", "pVBLI", "pVBEI")
V_EXITS = ("pBV", "pVBEV", "pVV")


class NumericalGuardError(ArithmeticError):
    """A closed form left its admissible range because of rounding."""


@dataclass(frozen=True)
class SupportProbs:
    pII: float
    pTXI: float
    pVI: float
    pBI: float
    pVBLI: float
    pVBEI: float
    pBV: float
    pVBEV: float
    pVV: float

    def idle_exit_sum(self) -> float:
        return math.fsum(getattr(self, k) for k in IDLE_EXITS)

    def v_exit_sum(self) -> float:
        return math.fsum(getattr(self, k) for k in V_EXITS)

    def check(self, tol: float = SUM_TOL) -> "SupportProbs":
        bad = [k for k in FIELDS if not (0.0 <= getattr(self, k) <= 1.0)]
        if bad:
            raise ValueError(f"support probabilities outside [0, 1]: {bad}")
        if abs(self.idle_exit_sum() - 1.0) > tol:
            raise ValueError(f"idle exits sum to {self.idle_exit_sum()!r}")
        if abs(self.v_exit_sum() - 1.0) > tol:
            raise ValueError(f"V exits sum to {self.v_exit_sum()!r}")
        return self

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class VTransitionsAtDistance:
    """V-state exits seen by a receiver ``d_RX`` stations from its sender."""

    d_RX: int
    pBV_d: float
    pVBEV_d: float
    pVV_d: float


def aux_a(p_tx: float, p_of: float) -> float:
    """``a = (1 - p_tx) * (1 - p_of)``."""
    _check_open_unit("p_tx", p_tx)
    _check_open_unit("p_of", p_of)
    return (1.0 - p_tx) * (1.0 - p_of)


def _check_open_unit(name: str, value: float) -> None:
    if not (0.0 < value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")


# -- finite geometric sums --------------------------------------------------
#
# Both helpers take x together with an accurately computed u = 1 - x.  The
# ratio form is used only when the range is long compared with 1/u, which
# bounds its cancellation error; otherwise the terms are summed explicitly.


def _pow_1m(u: float, n: float) -> float:
    """(1 - u) ** n without forming 1 - u."""
    if n == 0:
        return 1.0
    return math.exp(n * math.log1p(-u))


def _one_minus_pow_1m(u: float, n: float) -> float:
    """1 - (1 - u) ** n."""
    if n == 0:
        return 0.0
    return -math.expm1(n * math.log1p(-u))


def geo_sum(x: float, u: float, lo: int, hi: int) -> float:
    """sum_{n=lo}^{hi} x**(n-1); zero for an empty range."""
    m = hi - lo + 1
    if m <= 0:
        return 0.0
    if m * u < 1.0:
        k = np.arange(lo - 1, hi, dtype=float)
        return math.fsum(np.power(x, k))
    return _pow_1m(u, lo - 1) * _one_minus_pow_1m(u, m) / u


def geo_nsum(x: float, u: float, lo: int, hi: int) -> float:
    """sum_{n=lo}^{hi} n * x**(n-1); zero for an empty range."""
    m = hi - lo + 1
    if m <= 0:
        return 0.0
    if m * u < 1.0:
        n = np.arange(lo, hi + 1, dtype=float)
        return math.fsum(n * np.power(x, n - 1))
    head = _pow_1m(u, lo - 1) * (1.0 + (lo - 1) * u)
    tail = _pow_1m(u, hi) * (1.0 + hi * u)
    return (head - tail) / (u * u)


# -- closed forms -------------------------------------------------------------


def _closed_idle_exits(p: float, R: int, f: float) -> tuple[float, float, float, float]:
    """Idle-state exits with the sums over d_F and the position inside the
    free area exchanged.

    Writing the free area as i stations left of the observer and j to its
    right, the size-biased weight factorises as f**2 * b**(i+j) and every
    case expression splits into a product of one-sided geometric sums.  The
    result carries no 1/p_tx factors, so it stays accurate as p_tx -> 0.
    """
    q = 1.0 - p
    b = 1.0 - f
    a = q * b
    ua = p + q * f
    g = geo_sum(a, ua, 1, R)
    # one side of the observer stays silent / hears a new transmitter
    quiet = 1.0 - p * b * g
    heard = p * b * g
    pII = q * quiet * quiet
    pBI = q * heard * heard
    pVI = 2 * R * p * (f * _pow_1m(ua, R + 1) * g + _pow_1m(p, 2 * R + 1) * _pow_1m(f, 2 * R + 1))
    pVBLI = 2.0 * p * f * a * geo_nsum(a, ua, 1, R)
    return pII, pVI, pBI, pVBLI


def _expanded_idle_exits(p: float, R: int, f: float) -> tuple[float, float, float, float]:
    """Idle-state exits summed range by range over d_F.

    Algebraically equal to :func:`_closed_idle_exits` but the 1/p_tx
    prefactors cancel badly for p_tx below about 1e-4; kept as an
    independent cross-check.
    """
    q = 1.0 - p
    b = 1.0 - f
    a = q * b
    ua = p + q * f
    ub = f
    qR = _pow_1m(p, R)
    q_R1 = qR * q
    q_2R1 = _pow_1m(p, 2 * R + 1)
    b_R1 = _pow_1m(f, R + 1)
    b_2R = _pow_1m(f, 2 * R)
    b_2R2 = _pow_1m(f, 2 * R + 2)
    f2 = f * f

    # p'_{I|I}: the three d_F ranges (<= R+1, R+2..2R, >= 2R+1) summed.
    pII = (
        f2 * q * (geo_nsum(a, ua, 1, R + 1) - geo_nsum(a, ua, R + 2, 2 * R))
        + f2 * (2 * R - 2 * q / p) * q * geo_sum(a, ua, R + 2, 2 * R)
        + (2.0 / p) * q_R1 * f * b_R1
        - (2 * R + 2.0 / p) * q_2R1 * f * b_2R
        + q_2R1 * b_2R * (1.0 + 2 * R * f)
    )

    # p'_{V|I}: free areas of size R+2..2R+2 and >= 2R+3.
    pVI = 2 * R * (
        f * q_R1 * (b_R1 - b_2R2)
        - f2 * q * geo_sum(a, ua, R + 2, 2 * R + 2)
        + f * (q_R1 - ((2 * R + 1) * p + 1.0) * q_2R1) * b_2R2
        + p * q_2R1 * b_2R2 * (1.0 + (2 * R + 2) * f)
    )

    # p'_{B|I}: same three ranges as p'_{I|I}.
    one_m_qR = _one_minus_pow_1m(p, R)
    part1 = q * f2 * (
        geo_nsum(b, ub, 1, R + 1)
        + geo_nsum(a, ua, 1, R + 1)
        - (2.0 / p) * geo_sum(b, ub, 1, R + 1)
        + (2.0 * q / p) * geo_sum(a, ua, 1, R + 1)
    )
    c0 = ((4.0 + 2 * R * p) * qR - 2.0) / p
    c1 = 1.0 - 2.0 * qR
    c2 = 2 * R + 2 - 2.0 / p
    part2 = q * f2 * (
        c0 * geo_sum(b, ub, R + 2, 2 * R)
        + c1 * geo_nsum(b, ub, R + 2, 2 * R)
        + c2 * geo_sum(a, ua, R + 2, 2 * R)
        - geo_nsum(a, ua, R + 2, 2 * R)
    )
    k_edge = 2 * q * one_m_qR * (R - one_m_qR / p)
    m_mid = q * one_m_qR * one_m_qR
    part3 = (k_edge - 2 * R * m_mid) * f * b_2R + m_mid * b_2R * (1.0 + 2 * R * f)
    pBI = part1 + part2 + part3

    # p'_{VBL|I}
    aR = _pow_1m(ua, R)
    aR1 = aR * a
    pVBLI = (2.0 * q / p) * (
        f * (1.0 - (R + 1) * b * aR + R * aR1)
        - f2 * geo_nsum(a, ua, 1, R + 1)
        + f2 * q * a * geo_nsum(a, ua, 1, R)
    )
    return pII, pVI, pBI, pVBLI


def _closed_v_exits(p: float, R: int, f: float) -> tuple[float, float, float]:
    q = 1.0 - p
    a = q * (1.0 - f)
    ua = p + q * f
    # The summed forms of the V-state exits, with the inner sums over the
    # later transmitter's position kept as finite geometric sums.
    pBV = (p / R) * ((R + 1) * geo_sum(a, ua, 1, R) - geo_nsum(a, ua, 1, R))
    pVBEV = (p / R) * a * geo_nsum(a, ua, 1, R)
    pVV = f * q * geo_sum(a, ua, 1, R + 1) + _pow_1m(ua, R + 1)
    return pBV, pVBEV, pVV


def _finish(p: float, pII, pVI, pBI, pVBLI, pBV, pVBEV, pVV) -> SupportProbs:
    pVBEI = 1.0 - math.fsum((pII, p, pVI, pBI, pVBLI))
    values = {
        "pII": pII, "pTXI": p, "pVI": pVI, "pBI": pBI, "pVBLI": pVBLI,
        "pVBEI": pVBEI, "pBV": pBV, "pVBEV": pVBEV, "pVV": pVV,
    }
    for k, v in values.items():
        if not math.isfinite(v) or v < -_BOUND_SLACK or v > 1.0 + _BOUND_SLACK:
            raise NumericalGuardError(f"{k} = {v!r} outside [0, 1]")
        values[k] = min(max(v, 0.0), 1.0)
    return SupportProbs(**values)


def _check_inputs(p: float, L: int, R: int, f: float) -> None:
    _check_open_unit("p_tx", p)
    _check_open_unit("p_of", f)
    if L < 1 or R < 1:
        raise ValueError(f"L and R must be >= 1, got L={L}, R={R}")


def support_probabilities(p_tx: float, L: int, R: int, p_of: float) -> SupportProbs:
    """Closed-form supporting probabilities for a candidate ``p_of``.

    ``L`` does not enter any of the nine values; it is accepted so that the
    call mirrors the rest of the model API.
    """
    _check_inputs(p_tx, L, R, p_of)
    pII, pVI, pBI, pVBLI = _closed_idle_exits(p_tx, R, p_of)
    pBV, pVBEV, pVV = _closed_v_exits(p_tx, R, p_of)
    return _finish(p_tx, pII, pVI, pBI, pVBLI, pBV, pVBEV, pVV)


# -- series oracle ------------------------------------------------------------


def series_terms(p_of: float, tail_eps: float) -> int:
    """Smallest n_max whose size-biased geometric tail is below tail_eps."""
    f = p_of
    n = max(1, int(math.ceil(math.log(tail_eps) / math.log1p(-f))))
    # size-biased tail mass beyond n: b**n * (1 + n f)
    while _pow_1m(f, n) * (1.0 + n * f) > tail_eps:
        n += max(1, n // 16)
    return n


def support_probabilities_by_series(
    p_tx: float, L: int, R: int, p_of: float, tail_eps: float = 1e-15
) -> SupportProbs:
    """Sum the per-position case expressions against the d_F weights.

    Cost grows as ``n_max**2`` with ``n_max ~ log(tail_eps) / log(1 - p_of)``,
    so this is meant for ``p_of`` of order 1e-2 and above.
    """
    _check_inputs(p_tx, L, R, p_of)
    if not (0.0 < tail_eps <= 1e-6):
        raise ValueError("tail_eps must lie in (0, 1e-6]")
    p, f = p_tx, p_of
    q = 1.0 - p
    n_max = series_terms(f, tail_eps) + 2 * R + 2
    qpow = np.power(q, np.arange(0, 2 * R + 3, dtype=float))

    xs = np.arange(1, R + 2)
    vbl_x = (xs - 1) * qpow[xs - 1] * p          # left-most new transmitter at x
    bv_x = (R + 1 - xs[:R]) / R * qpow[xs[:R] - 1] * p
    vbe_x = (xs - 1) / R * qpow[xs - 1] * p

    acc_sized = np.zeros(4)   # II, BI, VI, VBLI (weighted by n b^{n-1} f^2)
    acc_plain = np.zeros(3)   # BV, VBEV, VV (weighted by b^{n-1} f)
    comp_sized = np.zeros(4)
    comp_plain = np.zeros(3)
    for n in range(1, n_max + 1):
        w_plain = _pow_1m(f, n - 1) * f
        x = np.arange(1, n + 1)
        left = np.minimum(x - 1, R)
        right = np.minimum(n - x, R)
        # no free station within reach of x (itself included) transmits
        ii = qpow[left + right + 1].sum() / n
        # x stays silent, and both sides get at least one new transmitter
        bi = (q * (1.0 - qpow[left]) * (1.0 - qpow[right])).sum() / n
        # a transmitter at x whose right side stays clear creates R V-stations
        clear = n - x >= R + 1
        vi = 2 * R * p * qpow[np.minimum(n - x[clear], 2 * R + 1)].sum() / n
        m = min(n, R + 1)
        vbl = 2.0 * vbl_x[:m].sum() / n
        sized = np.array([ii, bi, vi, vbl]) * (n * w_plain * f)
        plain = np.array([bv_x[: min(n, R)].sum(), vbe_x[:m].sum(), qpow[m]]) * w_plain
        # Kahan-compensated accumulation keeps the oracle at ~1e-16
        y = sized - comp_sized
        t = acc_sized + y
        comp_sized = (t - acc_sized) - y
        acc_sized = t
        y = plain - comp_plain
        t = acc_plain + y
        comp_plain = (t - acc_plain) - y
        acc_plain = t
    pII, pBI, pVI, pVBLI = (float(v) for v in acc_sized)
    pBV, pVBEV, pVV = (float(v) for v in acc_plain)
    return _finish(p, pII, pVI, pBI, pVBLI, pBV, pVBEV, pVV)


# -- receiver-distance conditioned V exits -------------------------------------


def v_transitions_at_distance(p_tx: float, R: int, p_of: float, d_rx: int) -> VTransitionsAtDistance:
    """V-state exit probabilities for a receiver ``d_rx`` stations from the
    transmitter it is tracking."""
    _check_open_unit("p_tx", p_tx)
    _check_open_unit("p_of", p_of)
    if not (1 <= d_rx <= R):
        raise ValueError(f"d_RX must lie in [1, {R}], got {d_rx}")
    p, f, d = p_tx, p_of, d_rx
    q = 1.0 - p
    a = q * (1.0 - f)
    ua = p + q * f
    qd = _pow_1m(p, d)
    bd = _pow_1m(f, d)
    b_R1 = _pow_1m(f, R + 1)
    # a later transmitter within d free positions is heard together with the
    # early one
    pBV_d = _one_minus_pow_1m(f, d) - f * q * geo_sum(a, ua, 1, d) + _one_minus_pow_1m(p, d) * bd
    pVBEV_d = (
        qd * (bd - b_R1)
        - f * q * qd * bd * geo_sum(a, ua, 1, R - d + 1)
        + qd * _one_minus_pow_1m(p, R + 1 - d) * b_R1
    )
    pVV_d = f * q * geo_sum(a, ua, 1, R + 1) + _pow_1m(ua, R + 1)
    return VTransitionsAtDistance(d_RX=d, pBV_d=pBV_d, pVBEV_d=pVBEV_d, pVV_d=pVV_d)
