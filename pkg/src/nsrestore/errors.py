"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: UsageError -> 2, IncompatibleError -> 3,
I/O and format errors -> 4, NumericError -> 5.
"""


class NsError(Exception):
    """Base class for all toolkit errors."""


class UsageError(NsError):
    """Bad command-line arguments or parameter ranges."""


class FormatError(NsError):
    """Malformed TEN1/GMM1/PGM/PPM content.

    Carries the 1-based line number of the offending token when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionError(NsError):
    """Operand shapes or operator dimensions do not chain."""


class IncompatibleError(NsError):
    """Method and operator (or parameters) cannot be combined."""


class NumericError(NsError):
    """Numerical failure: non-convergence, degenerate weights, domain error."""
