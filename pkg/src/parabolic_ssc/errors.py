"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input data violates a shape, finiteness or domain precondition."""


class GridMismatchError(InvalidInputError):
    """Two fields that must share a grid do not."""


class SaturationError(OverflowError):
    """Exponential nonlinearity evaluated beyond the representable range."""


class NonconvergenceError(RuntimeError):
    """Newton iteration failed inside a time step."""

    def __init__(self, step, residual, message=None):
        self.step = step
        self.residual = residual
        if message is None:
            message = f"Newton did not converge at time step {step} (residual {residual:.3e})"
        super().__init__(message)


class SingularStepError(RuntimeError):
    """The implicit step matrix could not be factorized."""


class DegenerateInstanceError(ValueError):
    """Manufactured adjoint recipe yields no bang or sparse structure."""


class UndefinedMultiplierError(ValueError):
    """The sparsity multiplier is requested with zero sparsity weight."""


class NoRetainedSamplesError(RuntimeError):
    """A sampling campaign retained nothing; widen the neighbourhood."""


class EmptyConeWarning(UserWarning):
    """Rejection sampling found no member of the requested cone."""
