"""Exception types shared across the pipeline."""


class StreamQoEError(Exception):
    """Base class for all pipeline errors."""


class VideoFormatError(StreamQoEError):
    """Raw video file does not match the declared geometry."""


class InvalidPatternError(StreamQoEError):
    """Playout pattern violates its coverage/order invariants."""


class AlignmentError(StreamQoEError):
    """Frame alignment is inconsistent with the sequences it is applied to."""


class FrameSizeError(StreamQoEError):
    """Frame too small for the requested metric configuration."""


class ScoreIngestError(StreamQoEError):
    """External per-frame score file is incomplete or malformed."""


class EmptySeriesError(StreamQoEError):
    """Quality series has no usable (non-stalled) frames."""


class NumericError(StreamQoEError):
    """Linear system is singular or otherwise numerically unsolvable."""


class ConvergenceError(StreamQoEError):
    """Iterative solver hit its iteration cap before converging."""


class UnsupportedModelError(StreamQoEError):
    """Operation is not defined for this regressor kind."""


class DegenerateSplitError(StreamQoEError):
    """Split parameters would leave the train or test side empty."""


class FeatureSubsetError(StreamQoEError):
    """Requested feature subset is unavailable or inconsistent."""


class ModelFormatError(StreamQoEError):
    """Persisted model file has an unsupported or corrupted format."""
