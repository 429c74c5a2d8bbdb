"""Exception types shared across the library.

The CLI maps these onto exit codes: configuration/contract problems -> 2,
I/O and file-format problems -> 3, numeric failures -> 4.
"""


class ContractViolation(ValueError):
    """An argument violates a documented precondition (shape, range, ...)."""


class ConfigurationError(ValueError):
    """A configuration is invalid or infeasible."""


class FormatError(ValueError):
    """A file's content does not match the expected binary/text format."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the computation requires finite ones."""


class DegenerateInputError(ValueError):
    """The input is degenerate for the requested statistic (e.g. zero spread)."""
