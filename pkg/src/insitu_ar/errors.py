"""Exception hierarchy shared by every module of the package."""


class InsituError(Exception):
    """Base class for all errors raised by :mod:`insitu_ar`."""


class UsageError(InsituError, ValueError):
    """An operation was called with arguments violating its contract."""


class DimensionError(UsageError):
    """A history window does not match the model order."""


class ConfigError(UsageError):
    """A configuration record is invalid.

    ``field`` names the offending entry so callers can point at it.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DataError(InsituError, ValueError):
    """A sampled value is not finite.

    Carries the ``(location, iteration)`` coordinate of the bad sample and,
    when raised from an analyzer, the analyzer id.
    """

    def __init__(self, message, location=None, iteration=None, analyzer=None):
        super().__init__(message)
        self.location = location
        self.iteration = iteration
        self.analyzer = analyzer


class DivergenceError(InsituError, ArithmeticError):
    """Training or forwarding produced non-finite numbers."""

    def __init__(self, message, learning_rate=None, step_index=None):
        super().__init__(message)
        self.learning_rate = learning_rate
        self.step_index = step_index
