"""Exception hierarchy.

The CLI maps each family to an exit code: configuration problems exit 2,
data problems exit 3, numerical failures exit 4.
"""


class OWSGAError(Exception):
    """Base class for all package errors."""


class ConfigError(OWSGAError):
    pass


class DataError(OWSGAError):
    """Raised when an input file or array fails validation at ingestion."""


class NumericalError(OWSGAError):
    pass


class SeparationError(NumericalError):
    """Complete or quasi-complete separation: coefficients diverge."""


class RankError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class DegenerateCellError(OWSGAError):
    """A subgroup cell has an empty treatment arm, so no contrast exists."""
