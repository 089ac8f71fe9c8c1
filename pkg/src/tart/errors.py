"""Exception hierarchy shared by every tart module."""


class TartError(Exception):
    """Base class for all library errors."""


class ShapeError(TartError, ValueError):
    pass


class EmptyInputError(TartError, ValueError):
    pass


class SingularMatrixError(TartError, ArithmeticError):
    pass


class NumericalError(TartError, ArithmeticError):
    pass


class GradientStateError(TartError, RuntimeError):
    """backward() called twice on one tape without a reset."""


class FormatError(TartError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateTaskError(TartError, ArithmeticError):
    """Two normalized prototypes coincide, so the transformation is unsolvable."""

    def __init__(self, classes, message=None):
        self.classes = tuple(classes)
        if message is None:
            message = f"degenerate task: prototypes of classes {self.classes} collide"
        super().__init__(message)


class SamplingError(TartError, ValueError):
    def __init__(self, message, labels=()):
        self.labels = tuple(labels)
        super().__init__(message)


class ConfigError(TartError, ValueError):
    pass


class TrainingError(TartError, RuntimeError):
    pass


class CheckpointError(TartError, ValueError):
    pass
