"""Exception types shared across the package.

The CLI maps these onto exit codes: precondition/assumption failures
exit 3, resource-cap failures exit 4.
"""


class PreconditionError(ValueError):
    """An operation's stated precondition does not hold (e.g. no kappa exists)."""


class QuadratureError(RuntimeError):
    """Numeric quadrature failed to converge (distinct from a divergent integral)."""


class CapExceeded(RuntimeError):
    """A resource cap was hit (trajectory step cap, kernel iteration cap, oracle size cap)."""

    def __init__(self, message: str, spent: int | None = None):
        super().__init__(message)
        self.spent = spent
