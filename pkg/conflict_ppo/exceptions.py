"""Custom exceptions for the conflict-aware PPO package."""

from typing import Any


class ConflictPPOError(Exception):
    """Base exception for conflict_ppo errors."""

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)


class ValidationError(ConflictPPOError):
    """Raised when an argument, reward spec or config value is invalid."""

    pass


class ShapeError(ConflictPPOError):
    """Raised when a differentiable primitive receives non-conforming shapes."""

    pass


class TapeConsumedError(ConflictPPOError):
    """Raised when backward is called twice on the same tape."""

    pass


class EpisodeDoneError(ConflictPPOError):
    """Raised when an environment is stepped after its episode ended."""

    pass


class NumericalError(ConflictPPOError):
    """Raised when a non-finite observation, ratio or loss is produced."""

    pass


class CheckpointError(ConflictPPOError):
    """Raised when a checkpoint is malformed or fails to reproduce its probes."""

    pass


class TrainingAborted(NumericalError):
    """Raised by the trainer after a numerical failure.

    Carries the last-good checkpoint document so the caller can persist it.
    """

    def __init__(
        self,
        message: str,
        details: dict[str, Any] | None = None,
        checkpoint: dict[str, Any] | None = None,
        update: int | None = None,
    ):
        super().__init__(message, details)
        self.checkpoint = checkpoint
        self.update = update
