"""Steady-state model and ring simulator for CSMA broadcast with hidden
stations in a one-dimensional network."""
from .params import ModelParams, ParameterError, PhysicalConfig, derive_L, derive_R, validate
from .support import SupportProbs, support_probabilities, support_probabilities_by_series
from .solver import SolvedModel, solve_model, solve_p_OF
from .metrics import MetricsReport, metrics_report

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "ParameterError",
    "PhysicalConfig",
    "derive_L",
    "derive_R",
    "validate",
    "SupportProbs",
    "support_probabilities",
    "support_probabilities_by_series",
    "SolvedModel",
    "solve_model",
    "solve_p_OF",
    "MetricsReport",
    "metrics_report",
]
