"""Exception hierarchy shared across the package.

Each CLI exit code maps onto one branch of this hierarchy, so library
errors surface as stable machine-parsable categories.
"""


class RnnQuantError(Exception):
    """Base class for all package errors."""

    category = "internal"


class ShapeError(RnnQuantError):
    """Operand shapes are inconsistent."""

    category = "shape"


class ArgumentError(RnnQuantError):
    """An argument violates an operation's preconditions."""

    category = "argument"


class DegenerateWeightsError(RnnQuantError):
    """Step-size optimization received an all-zero weight group."""

    category = "degenerate-weights"


class NumericFault(RnnQuantError):
    """A NaN or Inf appeared where finite values are required."""

    category = "numeric"


class ConfigError(RnnQuantError):
    """A run configuration failed to parse or validate."""

    category = "config"


class DataError(RnnQuantError):
    """A data source is missing, empty, or malformed."""

    category = "data"


class CheckpointError(RnnQuantError):
    """A checkpoint file is corrupt, truncated, or of an unsupported version."""

    category = "checkpoint"


class IntegrityError(RnnQuantError):
    """An internal consistency invariant was violated (e.g. dual-weight state)."""

    category = "integrity"
