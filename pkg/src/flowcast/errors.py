"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, ValidationError and
its subclasses -> 3, NumericError -> 4.
"""


class FlowcastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FlowcastError):
    """Bad configuration value, flag, or config-file syntax."""


class DimensionError(FlowcastError):
    """Tensor shapes incompatible with the requested operation."""


class ValidationError(FlowcastError):
    """Input data violates a documented contract."""


class AlignmentError(ValidationError):
    """Timestamps across input files do not line up."""


class DegenerateInputError(ValidationError):
    """Input is technically parseable but unusable (e.g. all regions co-located)."""


class NumericError(FlowcastError):
    """Non-finite value or numerically impossible state, with the tensor named."""
