"""Exception hierarchy shared across the package."""


class RobustEditError(Exception):
    """Base class for all package errors."""


class ShapeError(RobustEditError, ValueError):
    pass


class DegenerateRowError(RobustEditError, ValueError):
    """A row (hidden state) has collapsed to (near) zero norm."""


class NumericalError(RobustEditError, ArithmeticError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DegenerateSpectrumError(NumericalError):
    pass


class CacheInvalidError(RobustEditError):
    """Forward cache was produced before the model was last mutated."""


class ConfigError(RobustEditError, ValueError):
    pass


class InvalidEditError(ConfigError):
    pass


class TrainingError(NumericalError):
    pass


class EditFailure(NumericalError):
    """Editing produced a non-finite loss; ``trace`` holds the steps so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DiscriminatorError(RobustEditError, ValueError):
    pass


class ParseError(RobustEditError, ValueError):
    pass
