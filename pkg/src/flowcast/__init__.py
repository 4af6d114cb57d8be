"""Spatio-temporal bike-flow forecasting with learned dynamic region graphs."""

from .errors import (
    AlignmentError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    FlowcastError,
    NumericError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ConfigError",
    "DegenerateInputError",
    "DimensionError",
    "FlowcastError",
    "NumericError",
    "ValidationError",
    "__version__",
]
