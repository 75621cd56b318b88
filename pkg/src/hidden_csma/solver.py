"""Joint fixed point of the two chains: find p_OF with pi_I(p_OF) = pi_F(p_OF)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .params import ModelParams
from .space_chain import SpaceChain, SpaceStationary, build_space_chain, pi_free, stationary_space
from .support import SupportProbs, support_probabilities
from .time_chain import TimeChain, TimeStationary, build_time_chain, pi_idle, stationary_time

RESIDUAL_BOUND = 1e-10
DEFAULT_TOL = 1e-12

# 512 uniform candidates on (1e-6, 1 - 1e-6), plus a log-spaced extension
# down to 1e-15: in the synchronized regime the root sits far below 1e-6.
UNIFORM_CANDIDATES = np.linspace(1e-6, 1.0 - 1e-6, 512)
LOG_CANDIDATES = np.logspace(-15.0, -6.0, 181)[:-1]
CANDIDATES = np.concatenate([LOG_CANDIDATES, UNIFORM_CANDIDATES])


class SolverError(RuntimeError):
    pass


class NoRootError(SolverError):
    """No sign change of the residual on the scan grid."""


class MultipleRootsWarning(UserWarning):
    pass


def residual(p_of: float, params: ModelParams) -> float:
    """pi_I(p_OF) - pi_F(p_OF)."""
    if not (0.0 < p_of < 1.0):
        raise ValueError(f"p_OF must lie in (0, 1), got {p_of!r}")
    s = support_probabilities(params.p_tx, params.L, params.R, p_of)
    return pi_idle(s, params.L) - pi_free(params, p_of)


@dataclass(frozen=True)
class Diagnostics:
    residual: float
    bracket: tuple[float, float]
    iterations: int
    roots: tuple[float, ...]
    multiple_roots: bool


def _bisect(params, lo, hi, r_lo, tol, max_iter=400):
    it = 0
    while it < max_iter:
        if hi - lo <= tol * min(1.0, hi):
            break
        # geometric midpoint while the bracket spans orders of magnitude
        mid = math.sqrt(lo * hi) if hi > 4.0 * lo else 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        r_mid = residual(mid, params)
        it += 1
        if r_mid == 0.0:
            return mid, mid, it
        if (r_mid > 0) == (r_lo > 0):
            lo, r_lo = mid, r_mid
        else:
            hi = mid
    return lo, hi, it


def solve_p_OF(params: ModelParams, tol: float = DEFAULT_TOL) -> tuple[float, Diagnostics]:
    """Scan the candidate grid, bisect every sign change and return the root
    with the smallest residual.

    The bracket is refined until its width is at most ``tol`` (relative to
    the root once the root is below 1).
    """
    if tol < 1e-14:
        raise ValueError("tol must be >= 1e-14")
    xs = CANDIDATES
    rs = np.array([residual(float(x), params) for x in xs])
    found = []
    total_it = 0
    for i in range(len(xs) - 1):
        if rs[i] == 0.0:
            found.append((abs(rs[i]), float(xs[i]), (float(xs[i]), float(xs[i]))))
            continue
        if (rs[i] > 0) != (rs[i + 1] > 0) and rs[i + 1] != 0.0:
            lo, hi, it = _bisect(params, float(xs[i]), float(xs[i + 1]), rs[i], tol)
            total_it += it
            r_lo, r_hi = residual(lo, params), residual(hi, params)
            root, r_root = (lo, r_lo) if abs(r_lo) <= abs(r_hi) else (hi, r_hi)
            found.append((abs(r_root), root, (lo, hi)))
    if rs[-1] == 0.0:
        found.append((0.0, float(xs[-1]), (float(xs[-1]), float(xs[-1]))))
    if not found:
        raise NoRootError(
            f"no sign change of pi_I - pi_F on the scan grid for {params}"
        )
    found.sort()
    best_r, root, bracket = found[0]
    multiple = len(found) > 1
    if multiple:
        warnings.warn(
            f"{len(found)} fixed points found for {params}; returning p_OF={root!r}",
            MultipleRootsWarning,
            stacklevel=2,
        )
    if best_r > RESIDUAL_BOUND:
        raise SolverError(f"root residual {best_r:.3e} exceeds {RESIDUAL_BOUND:g}")
    diag = Diagnostics(
        residual=best_r,
        bracket=bracket,
        iterations=total_it,
        roots=tuple(sorted(r for _, r, _ in found)),
        multiple_roots=multiple,
    )
    return root, diag


@dataclass(frozen=True)
class SolvedModel:
    params: ModelParams
    p_OF: float
    support: SupportProbs
    time_chain: TimeChain = field(repr=False)
    time_stationary: TimeStationary = field(repr=False)
    space_chain: SpaceChain = field(repr=False)
    space_stationary: SpaceStationary = field(repr=False)
    diagnostics: Diagnostics

    @property
    def pi_I(self) -> float:
        return self.time_stationary.pi_I

    @property
    def pi_F(self) -> float:
        return self.space_stationary.pi_F


def model_at(params: ModelParams, p_of: float, diagnostics: Diagnostics | None = None) -> SolvedModel:
    """Assemble both chains at a given p_OF (solved or not)."""
    support = support_probabilities(params.p_tx, params.L, params.R, p_of)
    tc = build_time_chain(params, support)
    ts = stationary_time(tc)
    sc = build_space_chain(params, p_of)
    ss = stationary_space(sc)
    if diagnostics is None:
        r = ts.pi_I - ss.pi_F
        diagnostics = Diagnostics(abs(r), (p_of, p_of), 0, (p_of,), False)
    return SolvedModel(params, p_of, support, tc, ts, sc, ss, diagnostics)


def solve_model(params: ModelParams, tol: float = DEFAULT_TOL) -> SolvedModel:
    p_of, diag = solve_p_OF(params, tol)
    return model_at(params, p_of, diag)
