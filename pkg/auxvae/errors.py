"""Exception hierarchy for auxvae."""

from typing import Optional


class AuxVAEError(Exception):
    """Base class for all auxvae errors."""


class DataValidationError(AuxVAEError, ValueError):
    """Input data is malformed, non-finite or empty."""


class ShapeError(AuxVAEError, ValueError):
    """Tensor or window shapes do not agree."""


class NonFiniteError(AuxVAEError, ArithmeticError):
    """A loss term or gradient became NaN or infinite."""

    def __init__(self, message: str, term: Optional[str] = None, path: Optional[str] = None):
        super().__init__(message)
        self.term = term
        self.path = path


class CheckpointError(AuxVAEError):
    """Checkpoint is corrupt or does not match the requested configuration."""


class LeakageError(AuxVAEError):
    """The held-out participant reached training data or normalization statistics."""


class TrainingAborted(AuxVAEError):
    """Training diverged; the last good checkpoint was written before aborting."""

    def __init__(self, message: str, checkpoint: Optional[str] = None, diagnostic: str = ""):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.diagnostic = diagnostic
