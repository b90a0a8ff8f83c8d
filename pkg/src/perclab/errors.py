"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates the documented preconditions."""


class NumericError(ArithmeticError):
    """A numerical routine failed (zero integral, solver non-convergence)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResourceError(RuntimeError):
    """A sampling loop exhausted its retry budget."""


class NotWeakDecayError(ParameterError):
    """No admissible regularity exponent gives an effective decay below 2."""
