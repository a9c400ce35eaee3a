"""Exception hierarchy shared by the alignment kernels, the harness and the CLI."""


class DCNLabError(Exception):
    """Base class for every error raised by the lab."""


class InputError(DCNLabError, ValueError):
    """An argument has an invalid value."""


class ShapeError(InputError):
    """Tensor dimensions do not satisfy an operation's contract."""


class SizeError(InputError):
    """The flat length of a tensor does not fit in an index."""


class DegenerateInputError(InputError):
    """Statistic is undefined for the input (e.g. zero variance)."""


class EvaluationError(DCNLabError):
    """A forward evaluation produced a non-finite value."""


class DivergenceError(DCNLabError):
    """Optimization produced a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class FormatError(DCNLabError):
    """A file does not follow its declared format."""


class WriteError(DCNLabError, OSError):
    """An artifact could not be written."""
