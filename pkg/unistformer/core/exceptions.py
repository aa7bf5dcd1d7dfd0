"""Exception hierarchy shared by the numeric core, data files and the CLI."""


class UniSTError(Exception):
    """Base exception for UniSTFormer errors.

    ``exit_code`` is the process exit status the CLI reports for this class.
    """

    exit_code = 1


class ConfigError(UniSTError):
    """Raised when a model, training or run configuration is invalid."""
    pass


class ConfigMismatchError(ConfigError):
    """Raised when a checkpoint does not match the expected model configuration."""
    pass


class ShapeError(UniSTError, ValueError):
    """Raised when tensor shapes, axes or kernel sizes are inconsistent."""
    pass


class LabelError(UniSTError, ValueError):
    """Raised when a class label is outside ``[0, num_classes)``."""
    pass


class GraphError(UniSTError, RuntimeError):
    """Raised on invalid use of the autograd graph."""
    pass


class DataFormatError(UniSTError):
    """Base exception for unreadable or invalid data files."""

    exit_code = 2


class BadMagicError(DataFormatError):
    """Raised when a file does not start with the expected magic bytes."""
    pass


class TruncatedFileError(DataFormatError):
    """Raised when a file ends before its declared payload."""
    pass


class DimensionOverflowError(DataFormatError):
    """Raised when declared dimensions are zero or exceed the supported size."""
    pass


class NonFiniteDataError(DataFormatError):
    """Raised when a payload holds NaN or infinite values."""
    pass


class ManifestError(DataFormatError):
    """Raised when a dataset manifest is malformed or inconsistent."""
    pass


class CheckpointError(DataFormatError):
    """Raised when a checkpoint file is corrupt."""
    pass


class NumericError(UniSTError, ArithmeticError):
    """Raised when a computation produces NaN or infinite values."""

    exit_code = 3


class TrainingDivergedError(NumericError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class GradCheckFailedError(NumericError):
    """Raised when a finite-difference gradient check exceeds its tolerance."""
    pass
