"""Exception hierarchy shared by the toolkit.

The CLI maps these onto exit codes: usage problems (1), bad input data (2)
and numerical failures (3).
"""


class WABHError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 3


class DimensionError(WABHError, ValueError):
    """Inputs have incompatible or empty shapes."""

    exit_code = 2


class DomainError(WABHError, ValueError):
    """An argument lies outside the domain of the function."""

    exit_code = 1


class InputError(WABHError, ValueError):
    """Malformed or non-finite input data."""

    exit_code = 2


class DegenerateError(WABHError, ValueError):
    """The statistic is undefined for this input (e.g. a constant regressor)."""

    exit_code = 2


class IngestionError(InputError):
    """A prior or data file failed validation."""


class NoSolutionError(WABHError, ArithmeticError):
    """The Lagrange constraint has no root inside the search bracket."""

    exit_code = 3


class MMWInfeasibleError(NoSolutionError):
    """No multiplier with ``log c > 0`` satisfies the constraint."""


class GenerationError(WABHError, ArithmeticError):
    """A random field could not be generated for the requested covariance."""

    exit_code = 3
