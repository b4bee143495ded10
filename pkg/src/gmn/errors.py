"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: validation errors -> 1,
numerical failures -> 2, IO failures -> 3.
"""


class GmnError(Exception):
    """Base class for all package errors."""


class ValidationError(GmnError):
    """Malformed input, config, or contract violation."""


class NumericalError(GmnError):
    """A numerical procedure failed (divergence, NaN/Inf, non-convergence)."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class GraphIOError(GmnError):
    """File could not be read, written, or parsed."""
