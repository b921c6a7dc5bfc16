"""Exception types shared across the package."""

from __future__ import annotations


class FdreconError(Exception):
    """Base class for all package errors."""


class ParseError(FdreconError):
    """Raised when an input file cannot be parsed.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(FdreconError):
    """Raised for structurally invalid datasets or curves."""


class InsufficientLocalDataError(FdreconError):
    """Raised when a local fit has too few effective observations.

    Attributes
    ----------
    u : float
        Evaluation point of the failed fit.
    effective_count : int
        Number of observations with nonzero kernel weight.
    """

    def __init__(self, u: float, effective_count: int):
        self.u = float(u)
        self.effective_count = int(effective_count)
        super().__init__(
            f"insufficient local data at u={u:.6g} (effective count {effective_count})"
        )


class NotEstimableError(FdreconError):
    """Raised when a quantity cannot be estimated from the available data."""


class DegenerateCovarianceError(FdreconError):
    """Raised when a covariance block has no positive eigenvalues."""


class IllConditionedError(FdreconError):
    """Raised when a score system stays non positive definite after the jitter policy.

    Attributes
    ----------
    condition_estimate : float
        Condition-number estimate of the offending matrix (inf if unknown).
    """

    def __init__(self, message: str, condition_estimate: float = float("inf")):
        self.condition_estimate = float(condition_estimate)
        super().__init__(f"{message} (condition estimate {condition_estimate:.3g})")


class StudyError(FdreconError):
    """Raised when a simulation study exceeds its failure budget."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class UsageError(FdreconError):
    """Raised for invalid configuration or command-line usage."""
