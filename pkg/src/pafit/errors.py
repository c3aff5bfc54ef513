"""Exception types shared across the package."""


class PafitError(Exception):
    """Base class for all package errors."""


class DomainError(PafitError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvalidVariantError(PafitError, TypeError):
    """The operation is not defined for this kind of fitness model."""


class SolverError(PafitError, RuntimeError):
    """A root finder or eigen solver failed to converge.

    ``state`` carries whatever diagnostics the solver had when it gave up
    (bracket, iteration count, last residual).
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = dict(state or {})


class TenabilityError(PafitError, RuntimeError):
    """An urn update would drive a ball count negative."""

    def __init__(self, message, step=None, counts=None, bin=None, delta=None):
        super().__init__(message)
        self.step = step
        self.counts = counts
        self.bin = bin
        self.delta = delta


class ExtinctionError(PafitError, RuntimeError):
    """The total activity-weighted load of an urn dropped to zero."""


class InsufficientDataError(PafitError, ValueError):
    """Too few observations for the requested estimate."""


class SummaryError(PafitError, ValueError):
    """A stored summary is malformed or violates its own accounting."""
