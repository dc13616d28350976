"""Exception types shared across the package."""


class PuTrafficError(Exception):
    """Base class for all package errors."""


class DomainError(PuTrafficError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class UndefinedEstimatorError(DomainError):
    """Bias correction is undefined because p_f + p_m equals 1."""


class NoSolutionError(PuTrafficError):
    """A closed-form solve has no admissible solution (degenerate data)."""


class InfeasibleError(DomainError):
    """The requested target cannot be met for any input."""


class EnumerationLimitError(DomainError):
    """An exhaustive oracle was asked to enumerate beyond its cost guard."""


class SourceExhaustedError(PuTrafficError):
    """A replayed sample source has no more samples."""
