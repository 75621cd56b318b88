"""Model parameters and the physical-to-topological conversion."""
from __future__ import annotations

import math
import numbers
from dataclasses import dataclass


class ParameterError(ValueError):
    """One or more model parameters violate their invariants."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class PhysicalConfig:
    """Physical inputs: slot and frame duration in seconds, sensing range in
    meters and station density in stations per meter."""

    slot_seconds: float
    frame_seconds: float
    sensing_range_m: float
    density: float

    def __post_init__(self):
        problems = [
            f"{name} must be > 0 (got {getattr(self, name)!r})"
            for name in ("slot_seconds", "frame_seconds", "sensing_range_m", "density")
            if not (getattr(self, name) > 0 and math.isfinite(getattr(self, name)))
        ]
        if problems:
            raise ParameterError(problems)


@dataclass(frozen=True)
class ModelParams:
    """The triple driving the whole model.

    ``p_tx`` is the conditional channel access probability, ``L`` the frame
    length in slots and ``R`` the number of stations in the one-side
    sensing range.
    """

    p_tx: float
    L: int
    R: int

    def __post_init__(self):
        validate(self)

    @classmethod
    def from_physical(cls, p_tx: float, cfg: PhysicalConfig) -> "ModelParams":
        return cls(p_tx=p_tx, L=derive_L(cfg), R=derive_R(cfg))


# Relative slack applied before rounding so that e.g. 64e-6 / 2e-6 does not
# become 32.000000000000004 and round up to 33.
_ROUND_SLACK = 1e-9


def derive_L(cfg: PhysicalConfig) -> int:
    """Frame length in slots, ``ceil(l / sigma)``."""
    ratio = cfg.frame_seconds / cfg.slot_seconds
    nearest = round(ratio)
    if abs(ratio - nearest) <= _ROUND_SLACK * max(1.0, abs(ratio)):
        return max(1, int(nearest))
    return max(1, math.ceil(ratio))


def derive_R(cfg: PhysicalConfig) -> int:
    """One-side neighbour count, ``floor(r * beta)``.

    Raises ParameterError when fewer than one station falls in range.
    """
    product = cfg.sensing_range_m * cfg.density
    nearest = round(product)
    if abs(product - nearest) <= _ROUND_SLACK * max(1.0, abs(product)):
        value = int(nearest)
    else:
        value = math.floor(product)
    if value < 1:
        raise ParameterError(
            [f"degenerate topology: r*beta = {product!r} gives R = 0 stations in range"]
        )
    return value


def validate(params: ModelParams) -> ModelParams:
    problems = []
    p = params.p_tx
    if not isinstance(p, numbers.Real) or not math.isfinite(p) or not (0.0 < p < 1.0):
        problems.append(f"p_tx must lie in the open interval (0, 1) (got {p!r})")
    for name in ("L", "R"):
        v = getattr(params, name)
        if isinstance(v, bool) or not isinstance(v, numbers.Integral):
            problems.append(f"{name} must be an integer (got {v!r})")
        elif v < 1:
            problems.append(f"{name} must be >= 1 (got {v})")
    if problems:
        raise ParameterError(problems)
    return params
