"""Exception hierarchy shared across the toolkit.

The CLI maps these onto stable exit codes: usage problems exit 1,
validation problems (bad data, bad config, malformed containers) exit 2,
runtime failures (training divergence, I/O during a run) exit 3.
"""


class MsaForgeError(Exception):
    """Base class for all toolkit errors."""


class UsageError(MsaForgeError):
    """Bad command line: unknown subcommand, flag, or flag value."""


class ValidationError(MsaForgeError):
    """Invalid data or configuration supplied by the caller."""


class BundleFormatError(ValidationError):
    """Feature container is malformed: missing files, bad magic/header,
    manifest/array shape disagreement."""


class BundleValidationError(ValidationError):
    """Feature container parses but violates an invariant (label out of
    range, NaN cell, nonzero padding, duplicate id, ...)."""


class EmptySplitError(ValidationError):
    """A requested split contains no samples."""


class ExtractionError(ValidationError):
    """Feature extraction failed: unreadable input file, unsupported
    codec, unknown extractor kind, or per-sample failures in strict mode."""


class ModelError(ValidationError):
    """Unknown model name, missing hyperparameter, or a model/bundle
    mismatch detected before training starts."""


class ShapeError(MsaForgeError):
    """Tensor shapes do not conform for the attempted operation."""


class TrainingDivergedError(MsaForgeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, param_name: str | None, message: str):
        self.epoch = epoch
        self.param_name = param_name
        super().__init__(message)


class MetricError(ValidationError):
    """A metric is undefined for the given inputs (e.g. zero-variance
    correlation)."""
