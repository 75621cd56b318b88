"""Per-station time-domain Markov chain.

State roster (``L`` = frame length):

* ``I`` - idle;
* ``TX(L,n)`` - transmitting slot n of a frame;
* ``V(L,n)`` - receiving slot n from one transmitter, exposed to hidden
  stations;
* ``VBE(L,n)`` - receiving, with a hidden transmitter that started with the
  early one (virtually blocked, early);
* ``B(l,n)`` - hearing two overlapping transmitters, l slots to go for the
  early one;
* ``VBL(l,n)`` - receiving a late transmitter that started with an earlier
  one out of range (virtually blocked, late).

Rows of the transition matrix are source states, columns destinations.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .params import ModelParams
from .support import SupportProbs

ROW_TOL = 1e-12
RESIDUAL_TOL = 1e-10

KINDS = ("I", "TX", "V", "VBE", "B", "VBL")


class StationaryError(ArithmeticError):
    """The stationary solve did not meet its residual bound."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class TimeStateId(NamedTuple):
    kind: str
    total_len: int = 0
    step: int = 0

    def __str__(self) -> str:
        if self.kind == "I":
            return "I"
        return f"{self.kind}({self.total_len},{self.step})"


def enumerate_states(L: int) -> list[TimeStateId]:
    """All 1 + 3L + L**2 states in the canonical order.

    I, then TX, V, VBE (all of total length L) by step, then B by descending
    total length and ascending step, then VBL likewise.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    states = [TimeStateId("I")]
    for kind in ("TX", "V", "VBE"):
        states.extend(TimeStateId(kind, L, n) for n in range(1, L + 1))
    for l in range(L, 0, -1):
        states.extend(TimeStateId("B", l, n) for n in range(1, l + 1))
    for l in range(L - 1, 0, -1):
        states.extend(TimeStateId("VBL", l, n) for n in range(1, l + 1))
    return states


def state_count(L: int) -> int:
    return 1 + 3 * L + L * L


def expected_nnz(L: int) -> int:
    """Structural entry count of the transition matrix."""
    idle_row = 5 + (L - 1)
    tx_rows = L
    b_rows = L * (L + 1) // 2
    vbe_rows = L
    vbl_rows = L * (L - 1) // 2
    v_rows = 3 * (L - 1) + 2
    return idle_row + tx_rows + b_rows + vbe_rows + vbl_rows + v_rows


@dataclass(frozen=True)
class TimeChain:
    params: ModelParams
    support: SupportProbs
    states: list[TimeStateId]
    transitions: sp.csr_matrix
    index: dict = field(repr=False)

    def idx(self, kind: str, total_len: int = 0, step: int = 0) -> int:
        return self.index[TimeStateId(kind, total_len, step)]


def _edges(L: int, s: SupportProbs):
    I = TimeStateId("I")

    def st(kind, l, n):
        return TimeStateId(kind, l, n)

    yield I, I, s.pII
    yield I, st("TX", L, 1), s.pTXI
    yield I, st("B", L, 1), s.pBI
    yield I, st("V", L, 1), s.pVI + s.pVBLI / L
    yield I, st("VBE", L, 1), s.pVBEI
    for m in range(1, L):
        yield I, st("VBL", L - m, 1), s.pVBLI / L

    for n in range(1, L):
        yield st("TX", L, n), st("TX", L, n + 1), 1.0
    yield st("TX", L, L), I, 1.0

    for m in range(0, L):
        l = L - m
        for n in range(1, l):
            yield st("B", l, n), st("B", l, n + 1), 1.0
    # Both transmitters heard from B(L, .) started in the same slot and stop
    # together, so the station returns to idle.
    yield st("B", L, L), I, 1.0
    for m in range(1, L):
        yield st("B", L - m, L - m), st("V", L, L - m + 1), 1.0

    for n in range(1, L):
        yield st("V", L, n), st("B", L - n, 1), s.pBV
        yield st("V", L, n), st("VBE", L, n + 1), s.pVBEV
        yield st("V", L, n), st("V", L, n + 1), s.pVV
    yield st("V", L, L), st("V", L, 1), s.pBV
    yield st("V", L, L), I, 1.0 - s.pBV

    for n in range(1, L):
        yield st("VBE", L, n), st("VBE", L, n + 1), 1.0
    yield st("VBE", L, L), I, 1.0

    for m in range(1, L):
        l = L - m
        for n in range(1, l):
            yield st("VBL", l, n), st("VBL", l, n + 1), 1.0
        yield st("VBL", l, l), st("V", L, l + 1), 1.0


def build_time_chain(params: ModelParams, support: SupportProbs) -> TimeChain:
    support.check()
    L = params.L
    states = enumerate_states(L)
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for src, dst, p in _edges(L, support):
        rows.append(index[src])
        cols.append(index[dst])
        vals.append(p)
    n = len(states)
    P = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    row_sums = np.asarray(P.sum(axis=1)).ravel()
    bad = np.flatnonzero(np.abs(row_sums - 1.0) > ROW_TOL)
    if bad.size:
        names = ", ".join(str(states[i]) for i in bad[:5])
        raise ValueError(f"time chain rows not stochastic: {names}")
    return TimeChain(params=params, support=support, states=states, transitions=P, index=index)


@dataclass(frozen=True)
class TimeStationary:
    pi: np.ndarray
    pi_I: float
    pi_TX: float
    pi_RB: float
    residual: float
    method: str

    def of(self, chain: TimeChain, kind: str, total_len: int = 0, step: int = 0) -> float:
        return float(self.pi[chain.idx(kind, total_len, step)])


def residual_inf(chain: TimeChain, pi: np.ndarray) -> float:
    return float(np.max(np.abs(chain.transitions.T @ pi - pi)))


def block_offsets(L: int) -> dict:
    """Start index of each state block in the canonical order."""
    b0 = 1 + 3 * L
    vbl0 = b0 + L * (L + 1) // 2
    return {"I": 0, "TX": 1, "V": 1 + L, "VBE": 1 + 2 * L, "B": b0, "VBL": vbl0}


def _v_substates(support: SupportProbs, L: int) -> np.ndarray:
    """Unnormalised V(L,1..L) masses for pi_I = 1.

    Deterministic chains carry their entry mass unchanged, so only the L
    V sub-states are unknown.  A station leaving V(L,n) for B(L-n,1) comes
    back at V(L,L-n+1), which gives, for k = 1..L,

        V(k) = pVV * V(k-1) [k >= 2] + pBV * V(L-k+1) + c_k

    with c_1 = pVI + pVBLI/L and c_k = pVBLI/L otherwise.  The system is
    bidiagonal plus an anti-diagonal and is solved sparsely.
    """
    d = support.pVBLI / L
    k = np.arange(L)
    rows = np.concatenate([k, k[1:], k])
    cols = np.concatenate([k, k[:-1], L - 1 - k])
    vals = np.concatenate([np.ones(L), np.full(L - 1, -support.pVV), np.full(L, -support.pBV)])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(L, L))
    rhs = np.full(L, d)
    rhs[0] += support.pVI
    return np.atleast_1d(spla.spsolve(A, rhs))


def unnormalised_stationary(support: SupportProbs, L: int) -> np.ndarray:
    """Stationary masses in canonical order, scaled so that pi_I = 1."""
    v = _v_substates(support, L)
    d = support.pVBLI / L
    off = block_offsets(L)
    pi = np.zeros(state_count(L))
    pi[0] = 1.0
    pi[off["TX"]: off["TX"] + L] = support.pTXI
    pi[off["V"]: off["V"] + L] = v
    vbe = np.empty(L)
    vbe[0] = support.pVBEI
    vbe[1:] = support.pVBEI + np.cumsum(v[:-1]) * support.pVBEV
    pi[off["VBE"]: off["VBE"] + L] = vbe
    pos = off["B"]
    pi[pos: pos + L] = support.pBI
    pos += L
    for l in range(L - 1, 0, -1):
        # B(l, .) is entered from V(L, L-l)
        pi[pos: pos + l] = v[L - l - 1] * support.pBV
        pos += l
    pi[off["VBL"]:] = d
    return pi


def pi_idle(support: SupportProbs, L: int) -> float:
    """pi_I of the time chain, without assembling the matrix."""
    return 1.0 / math.fsum(unnormalised_stationary(support, L))


def _recursion(chain: TimeChain) -> np.ndarray:
    pi = unnormalised_stationary(chain.support, chain.params.L)
    return pi / math.fsum(pi)


def _sparse_solve(chain: TimeChain) -> np.ndarray:
    n = len(chain.states)
    A = (chain.transitions.T - sp.identity(n, format="csr")).tolil()
    A[0, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[0] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    return pi / pi.sum()


def power_iteration(P: sp.spmatrix, tol: float = 1e-15, max_iter: int = 2_000_000) -> np.ndarray:
    """Stationary vector of the lazy chain (P + I)/2, which shares it with P
    but is aperiodic by construction."""
    n = P.shape[0]
    PT = P.T.tocsr()
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + PT @ pi)
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    raise StationaryError("power iteration did not converge", float(np.max(np.abs(nxt - pi))))


def stationary_time(chain: TimeChain, method: str = "recursion") -> TimeStationary:
    if method == "recursion":
        pi = _recursion(chain)
    elif method == "sparse":
        pi = _sparse_solve(chain)
    elif method == "power":
        pi = power_iteration(chain.transitions)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = residual_inf(chain, pi)
    if not np.all(np.isfinite(pi)) or res >= RESIDUAL_TOL or np.min(pi) < -1e-15:
        raise StationaryError(f"time chain stationary solve ({method}) failed", res)
    pi = np.clip(pi, 0.0, None)
    L = chain.params.L
    pi_I = float(pi[chain.idx("I")])
    tx = [chain.idx("TX", L, n) for n in range(1, L + 1)]
    pi_TX = float(pi[tx].sum())
    return TimeStationary(
        pi=pi, pi_I=pi_I, pi_TX=pi_TX, pi_RB=1.0 - pi_I - pi_TX, residual=res, method=method
    )


def dump_coo(chain: TimeChain, out=None) -> str:
    """Coordinate text dump, one ``row col value`` triple per line, with the
    state labels in a leading comment block."""
    buf = io.StringIO()
    for i, s in enumerate(chain.states):
        buf.write(f"# {i} {s}\n")
    P = chain.transitions.tocoo()
    order = np.lexsort((P.col, P.row))
    for k in order:
        buf.write(f"{P.row[k]} {P.col[k]} {float(P.data[k])!r}\n")
    text = buf.getvalue()
    if out is not None:
        with open(out, "w") as fh:
            fh.write(text)
    return text
