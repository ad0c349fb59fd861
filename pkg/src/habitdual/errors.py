"""Exception types shared across the solver pipeline."""


class DomainError(ValueError):
    """An evaluation was requested outside the mathematical domain."""


class PreconditionError(ValueError):
    """Inputs violate a documented precondition (grid too narrow, mismatched shapes, ...)."""


class SchemeError(RuntimeError):
    """A numerical scheme failed to converge; carries the last residual when known."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DataError(RuntimeError):
    """Stored or upstream data violates an invariant it was supposed to satisfy."""


class UnboundedTransformError(DomainError):
    """The Legendre supremum is not attained at a finite point."""


class TruncationError(RuntimeError):
    """A query fell outside the truncated numerical box; the result would be extrapolated."""
