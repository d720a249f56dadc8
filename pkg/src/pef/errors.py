"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 3, NumericalError -> 4.
Everything else (bad flags, unknown subcommands) is a usage error -> 2.
"""


class PefError(Exception):
    """Base class for errors raised by this package."""


class DataError(PefError):
    """Malformed or inconsistent input data: files, grids, measurements,
    out-of-bounds points, violated preconditions on user-supplied values."""


class NumericalError(PefError):
    """Numerical failure during estimation or generation: non-finite
    likelihood, sigma collapse, exhausted rejection-sampling budget."""
