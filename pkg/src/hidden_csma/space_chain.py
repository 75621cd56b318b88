"""Space-domain chain over station locations, the d_F and d_TX laws, and the
R-Zone sub-chain that feeds the far end of the occupied area.

Walking along the line, a location is either in the interference-free area
F or in an occupied area O(n).  O(R) marks a transmitter; O(0..R-1) lead up
to it and O(R+1..2R) trail after it.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .params import ModelParams
from .support import _pow_1m, geo_sum
from .time_chain import RESIDUAL_TOL, StationaryError, power_iteration

ROW_TOL = 1e-12


class SpaceStateId(NamedTuple):
    kind: str
    n: int = -1

    def __str__(self) -> str:
        return "F" if self.kind == "F" else f"O({self.n})"


def space_states(R: int) -> list[SpaceStateId]:
    return [SpaceStateId("O", n) for n in range(2 * R + 1)] + [SpaceStateId("F")]


@dataclass(frozen=True)
class DfDistribution:
    p_OF: float

    def pmf(self, k):
        return df_pmf(self.p_OF, k)

    @property
    def mean(self) -> float:
        return 1.0 / self.p_OF


def df_pmf(p_of: float, k):
    """Geometric law of the interference-free run length, k >= 1."""
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("d_F is at least 1")
    out = np.exp((k_arr - 1) * math.log1p(-p_of)) * p_of
    return float(out) if out.ndim == 0 else out


class _Aux:
    """Shared quantities of the occupied-area laws."""

    def __init__(self, p: float, L: int, R: int, f: float):
        if not (0.0 < p < 1.0 and 0.0 < f < 1.0):
            raise ValueError("p_tx and p_OF must lie in (0, 1)")
        self.p, self.L, self.R, self.f = p, L, R, f
        self.q = 1.0 - p
        self.b = 1.0 - f
        self.a = self.q * self.b
        self.ua = p + self.q * f
        # 1 + L p (1 - a^{R+1}) / (1 - a)
        self.D = 1.0 + L * p * geo_sum(self.a, self.ua, 1, R + 1)

    def survival(self, d: int) -> float:
        """Pr{d_TX >= d} for 1 <= d <= R+1, written without cancellation."""
        return (self.f + self.p * self.b * _pow_1m(self.ua, d - 1)) / self.ua

    def near(self, k):
        """Range I, 1 <= k <= R."""
        k = np.asarray(k, dtype=float)
        return np.exp((k - 1) * math.log1p(-self.p) + k * math.log1p(-self.f)) * self.p


def _dtx_array(aux: _Aux, k: np.ndarray) -> np.ndarray:
    R, L = aux.R, aux.L
    pre = aux.survival(R + 1)
    out = np.zeros(k.shape, dtype=float)
    r1 = k <= R
    r2 = (k > R) & (k <= 2 * R + 1)
    r3 = k >= 2 * R + 2
    out[r1] = aux.near(k[r1])
    out[r2] = pre * L * aux.p * np.exp((k[r2] - R - 1) * math.log1p(-aux.ua)) / aux.D
    out[r3] = pre / aux.D * np.exp((k[r3] - 2 * R - 2) * math.log1p(-aux.f)) * aux.f
    return out


def dtx_pmf(params: ModelParams, p_of: float, k):
    """PMF of the distance between adjacent simultaneous transmitters."""
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("d_TX is at least 1")
    aux = _Aux(params.p_tx, params.L, params.R, p_of)
    out = _dtx_array(aux, np.atleast_1d(k_arr).astype(np.int64))
    return float(out[0]) if k_arr.ndim == 0 else out


def dtx_prefactor(params: ModelParams, p_of: float) -> float:
    """The bracketed factor of ranges II and III, 1 - p b (1 - a^R)/(1 - a)."""
    aux = _Aux(params.p_tx, params.L, params.R, p_of)
    return 1.0 - aux.p * aux.b * geo_sum(aux.a, aux.ua, 1, aux.R)


def dtx_total_mass(params: ModelParams, p_of: float) -> float:
    """Ranges I and II summed term by term plus the closed geometric tail."""
    aux = _Aux(params.p_tx, params.L, params.R, p_of)
    R = aux.R
    head = _dtx_array(aux, np.arange(1, 2 * R + 2))
    tail = aux.survival(R + 1) / aux.D
    return math.fsum(head) + tail


def dtx_survival(params: ModelParams, p_of: float, k: int) -> float:
    """Pr{d_TX >= k}."""
    if k <= 1:
        return 1.0
    aux = _Aux(params.p_tx, params.L, params.R, p_of)
    if k <= aux.R + 1:
        return aux.survival(k)
    return 1.0 - math.fsum(_dtx_array(aux, np.arange(1, k)))


@dataclass(frozen=True)
class DtxDistribution:
    params: ModelParams
    p_OF: float

    def pmf(self, k):
        return dtx_pmf(self.params, self.p_OF, k)

    def survival(self, k: int) -> float:
        return dtx_survival(self.params, self.p_OF, k)

    @property
    def total_mass(self) -> float:
        return dtx_total_mass(self.params, self.p_OF)


@dataclass(frozen=True)
class RZoneSolution:
    pi_NT: float
    pi_T: np.ndarray          # shape (R+1, L); row i is the closest-transmitter location
    p_NT_NT: float
    p_T_NT: np.ndarray        # p(T(i,1) <- NT), i = 0..R


def rzone_closed_forms(p_tx: float, L: int, R: int, p_of: float) -> RZoneSolution:
    aux = _Aux(p_tx, L, R, p_of)
    p_T_NT = p_tx * np.exp(np.arange(R + 1) * math.log1p(-aux.ua))
    p_NT_NT = 1.0 - p_tx * geo_sum(aux.a, aux.ua, 1, R + 1)
    pi_NT = 1.0 / aux.D
    pi_T = np.repeat((p_T_NT / aux.D)[:, None], L, axis=1)
    return RZoneSolution(pi_NT=pi_NT, pi_T=pi_T, p_NT_NT=p_NT_NT, p_T_NT=p_T_NT)


def rzone_chain_matrix(p_tx: float, L: int, R: int, p_of: float) -> np.ndarray:
    """Row-stochastic matrix of the R-Zone chain; state 0 is NT and state
    1 + i*L + (j-1) is T(i,j)."""
    sol = rzone_closed_forms(p_tx, L, R, p_of)
    n = 1 + (R + 1) * L
    P = np.zeros((n, n))
    P[0, 0] = sol.p_NT_NT
    for i in range(R + 1):
        base = 1 + i * L
        P[0, base] = sol.p_T_NT[i]
        for j in range(L - 1):
            P[base + j, base + j + 1] = 1.0
        P[base + L - 1, 0] = 1.0
    return P


@dataclass(frozen=True)
class SpaceChain:
    params: ModelParams
    p_OF: float
    states: list[SpaceStateId]
    transitions: np.ndarray
    hazard: np.ndarray        # p(O(R) <- O(R+j)), j = 0..R-1


def build_space_chain(params: ModelParams, p_of: float) -> SpaceChain:
    """Space chain for a candidate p_OF.

    From O(R+j) the next transmitter lies at distance d = j+1 with the
    conditional probability Pr{d_TX = d} / Pr{d_TX >= d}, so that walking
    O(R) -> ... -> O(R) reproduces the range-I law of d_TX exactly.
    """
    p, L, R = params.p_tx, params.L, params.R
    aux = _Aux(p, L, R, p_of)
    n = 2 * R + 2
    F = 2 * R + 1
    P = np.zeros((n, n))
    P[F, F] = 1.0 - p_of
    P[F, 0] = p_of
    for i in range(R):
        P[i, i + 1] = 1.0
    d = np.arange(1, R + 1)
    # survival S(d) = (f + p b a^{d-1}) / (1 - a), range-I pmf p b a^{d-1}
    head = p * aux.b * np.exp((d - 1) * math.log1p(-aux.ua))
    hazard = head * aux.ua / (p_of + head)
    for j in range(R):
        P[R + j, R] += hazard[j]
        P[R + j, R + j + 1] += 1.0 - hazard[j]
    k = np.arange(R + 1)
    P[2 * R, k] += L * p * np.exp((R - k) * math.log1p(-aux.ua)) / aux.D
    P[2 * R, F] += 1.0 / aux.D
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
    if bad.size:
        raise ValueError(f"space chain rows not stochastic at {[str(space_states(R)[i]) for i in bad]}")
    return SpaceChain(params=params, p_OF=p_of, states=space_states(R), transitions=P, hazard=hazard)


def reconstruct_near_dtx(chain: SpaceChain) -> np.ndarray:
    """Pr{d_TX = d}, d = 1..R, read back from the O(R..2R-1) rows."""
    R = chain.params.R
    P = chain.transitions
    out = np.empty(R)
    stay = 1.0
    for d in range(1, R + 1):
        row = R + d - 1
        out[d - 1] = stay * P[row, R]
        stay *= 1.0 - P[row, R]
    return out


@dataclass(frozen=True)
class SpaceStationary:
    pi: np.ndarray
    pi_F: float
    residual: float
    method: str


def _structured(chain: SpaceChain) -> np.ndarray:
    """Stationary masses with pi[O(R)] = 1, then normalised.

    After a transmitter the walk survives to O(R+j) with Pr{d_TX >= j+1};
    O(2R) splits into F (mass 1/D) and re-entry at O(0..R); F drains at
    rate p_OF into O(0).
    """
    R, L, p = chain.params.R, chain.params.L, chain.params.p_tx
    aux = _Aux(p, L, R, chain.p_OF)
    pi = np.zeros(2 * R + 2)
    surv = np.array([aux.survival(j + 1) for j in range(R + 1)])
    pi[R: 2 * R + 1] = surv
    u = surv[R]
    pi_F = u / (aux.D * chain.p_OF)
    pi[2 * R + 1] = pi_F
    enter = u * L * p * np.exp((R - np.arange(R)) * math.log1p(-aux.ua)) / aux.D
    pi[:R] = chain.p_OF * pi_F + np.cumsum(enter)
    return pi / math.fsum(pi)


def stationary_space(chain: SpaceChain, method: str = "structured") -> SpaceStationary:
    P = chain.transitions
    n = P.shape[0]
    if method == "structured":
        pi = _structured(chain)
    elif method == "dense":
        A = P.T - np.eye(n)
        A[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
    elif method == "power":
        import scipy.sparse as sp

        pi = power_iteration(sp.csr_matrix(P))
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.max(np.abs(P.T @ pi - pi)))
    if not np.all(np.isfinite(pi)) or res >= RESIDUAL_TOL or np.min(pi) < -1e-15:
        raise StationaryError(f"space chain stationary solve ({method}) failed", res)
    return SpaceStationary(pi=pi, pi_F=float(pi[-1]), residual=res, method=method)


def pi_free(params: ModelParams, p_of: float) -> float:
    """pi_F via the structured solve, without the residual check."""
    R, L, p = params.R, params.L, params.p_tx
    aux = _Aux(p, L, R, p_of)
    surv = np.array([aux.survival(j + 1) for j in range(R + 1)])
    u = surv[R]
    pi_F = u / (aux.D * p_of)
    enter = u * L * p * np.exp((R - np.arange(R)) * math.log1p(-aux.ua)) / aux.D
    o_lead = p_of * pi_F * R + math.fsum(np.cumsum(enter))
    return pi_F / (math.fsum(surv) + pi_F + o_lead)


def dump_space_chain(chain: SpaceChain) -> str:
    """Readable matrix dump, including the O(R) row derived from row
    stochasticity."""
    R = chain.params.R
    P = chain.transitions
    buf = io.StringIO()
    buf.write(f"# space chain p_tx={chain.params.p_tx!r} L={chain.params.L} R={R} p_OF={chain.p_OF!r}\n")
    buf.write(
        f"# derived row O({R}): p(O({R})<-O({R}))={P[R, R]!r} "
        f"p(O({R + 1})<-O({R}))={P[R, R + 1]!r}\n"
    )
    for i, j in zip(*np.nonzero(P)):
        buf.write(f"{chain.states[i]} -> {chain.states[j]} {float(P[i, j])!r}\n")
    return buf.getvalue()


def pmf_csv(params: ModelParams, p_of: float, k_max: int | None = None) -> str:
    """CSV text with columns k, f_dtx, f_df."""
    if k_max is None:
        k_max = 4 * params.R + 4
    k = np.arange(1, k_max + 1)
    ftx = dtx_pmf(params, p_of, k)
    fdf = df_pmf(p_of, k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "f_dtx", "f_df"])
    for row in zip(k.tolist(), ftx.tolist(), fdf.tolist()):
        w.writerow([row[0], repr(row[1]), repr(row[2])])
    return buf.getvalue()
