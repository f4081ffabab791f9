"""Exception and warning types shared across the package."""


class ManifoldMismatchError(ValueError):
    """Points or parameters do not live on the expected manifold."""


class DomainError(ValueError):
    """A scale or natural parameter is outside its admissible interval."""


class DegenerateMeanError(ArithmeticError):
    """A weighted mean is undefined (zero total weight, antipodal cancellation)."""


class NumericalDegeneracyError(ArithmeticError):
    """A recursion normalizer vanished.

    ``t`` is the (0-based) time index or EM iteration at which it happened.
    """

    def __init__(self, message: str, t: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.t = t
        self.iteration = iteration


class EnumerationLimitError(ValueError):
    """Exact enumeration would exceed the configuration guard."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance within its budget."""


class BoundaryClampWarning(RuntimeWarning):
    """A root-solve target was outside the attainable range and got clamped."""


class ConvergenceWarning(RuntimeWarning):
    """An iterative solver stopped at its iteration budget."""
