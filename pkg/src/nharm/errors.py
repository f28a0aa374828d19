"""Exception hierarchy.

The CLI maps each family to its own exit status, so every failure raised by
the library belongs to exactly one of the three classes below.
"""


class NharmError(Exception):
    """Base class for all library errors."""


class ConfigError(NharmError):
    """Malformed or missing configuration."""


class PreconditionError(NharmError):
    """Inputs violate the stated preconditions of an operation."""


class NumericalError(NharmError):
    """A computation ran but could not produce a trustworthy result."""


class DegreeAmbiguousError(NumericalError):
    """A raw degree estimate is too far from an integer, or estimators disagree."""
