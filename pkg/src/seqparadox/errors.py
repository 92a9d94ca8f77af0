"""Exception types raised across the package."""


class SeqParadoxError(Exception):
    """Base class for all package errors."""


class DomainError(SeqParadoxError, ValueError):
    """An argument lies outside the domain of the function."""


class DegenerateError(SeqParadoxError, ArithmeticError):
    """A truncation or conditioning probability underflowed to zero."""


class AccuracyError(SeqParadoxError, ArithmeticError):
    """A numerical routine failed to reach its tolerance.

    The best available estimate is kept on ``estimate`` so callers can
    decide whether it is still usable.
    """

    def __init__(self, message: str, estimate: float = float("nan"), error: float = float("nan")):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class InconsistentDataError(SeqParadoxError, ValueError):
    """Observed data cannot have been produced by the stated design.

    ``value`` carries the log-likelihood sentinel (``-inf``).
    """

    value = float("-inf")


class UnsupportedError(SeqParadoxError, ValueError):
    """The requested branch or input is outside what is defined."""


class EmptySelectionError(SeqParadoxError, RuntimeError):
    """A conditioned simulation retained no replicates."""
