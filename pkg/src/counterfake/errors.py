"""Error taxonomy shared across the package.

Every failure mode callers are expected to distinguish gets its own class;
everything inherits from CounterfakeError so scripts can catch broadly.
"""


class CounterfakeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CounterfakeError, ValueError):
    """Invalid or inconsistent configuration values."""


class InputError(CounterfakeError, ValueError):
    """Tensor or array input violating a documented contract (shape, range, dtype)."""


class NumericError(CounterfakeError, ArithmeticError):
    """NaN or Inf produced where a finite value is required."""


class IngestionError(CounterfakeError, ValueError):
    """Dataset loading failed: unreadable files, empty directories, size mismatches."""


class DegenerateTransformError(CounterfakeError, ValueError):
    """A sampled transform pushed every sampling point outside the image."""


class TrainingDiverged(NumericError):
    """Training hit non-finite values; carries the path of the last good checkpoint."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
