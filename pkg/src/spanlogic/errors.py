"""Exception hierarchy shared across the package."""


class SpanlogicError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SpanlogicError):
    """A dataset file could not be parsed or violates the format contract."""


class SegmentationError(SpanlogicError):
    """Tokenization or span construction failed for an input."""


class LogicError(SpanlogicError):
    """Span decisions and the sentence prediction are mutually inconsistent."""


class ModelError(SpanlogicError):
    """A model input violates a shape or value contract."""


class CheckpointError(SpanlogicError):
    """A checkpoint is missing, corrupt, or was built under a different config."""


class TrainingError(SpanlogicError):
    """The optimization loop hit an unrecoverable state (e.g. non-finite loss)."""
