"""Structured error types shared across the pipeline.

Every error a subcommand can surface to the user derives from PipelineError,
which the CLI maps to exit code 2. Anything else is an internal failure
(exit code 1).
"""


class PipelineError(Exception):
    """Base class for expected, user-facing failures."""


class LayoutError(PipelineError):
    """Dataset directory does not follow the expected on-disk layout."""


class DecodeError(PipelineError):
    """An image file exists but cannot be decoded."""


class MissingAnnotationError(PipelineError):
    """A split configuration requires annotations a dataset does not have."""


class ShapeError(PipelineError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(PipelineError):
    """Run configuration is malformed or inconsistent."""


class CheckpointError(PipelineError):
    """Checkpoint file is malformed or does not match the model."""


class TrackingError(PipelineError):
    """Inconsistent tracking inputs (duplicate matches, unmapped instances)."""


class TrainingError(PipelineError):
    """Training aborted (for example on a non-finite loss)."""
