class ArgumentError(ValueError):
    """Invalid argument, dimension mismatch or bad config value."""


class NumericalError(ArithmeticError):
    """Non-finite value met during evaluation, integration or solving."""


class ConditioningError(NumericalError):
    """Gram matrix could not be factorised even after the largest allowed shift."""


class ConsistencyError(NumericalError):
    """Two routes that must agree did not (e.g. imaginary residue of a real model)."""


class DivergenceError(NumericalError):
    """Lifted prediction blew up past the guard."""
