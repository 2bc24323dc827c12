"""Exception hierarchy shared across the package."""


class LatentDragError(Exception):
    """Base class for all package-specific errors."""


class InputError(LatentDragError, ValueError):
    """A caller-supplied value violates a precondition (shape, range, emptiness)."""


class ConfigError(LatentDragError, ValueError):
    """A configuration is internally inconsistent or incompatible with loaded weights."""


class CheckpointError(LatentDragError, RuntimeError):
    """A checkpoint archive is malformed, incomplete, or mismatched."""


class CalibrationError(LatentDragError, RuntimeError):
    """Flow normalizer calibration produced a degenerate (zero) scale."""


class TrainingError(LatentDragError, RuntimeError):
    """Training aborted on a non-recoverable condition (e.g. non-finite loss)."""
