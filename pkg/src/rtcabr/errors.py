"""Exception hierarchy shared across the package."""


class RtcAbrError(Exception):
    """Base class for all package errors."""


class ParseError(RtcAbrError):
    """A file could not be parsed under the declared format."""


class ValidationError(RtcAbrError):
    """Parsed data violates a domain invariant."""


class OutOfRange(RtcAbrError):
    """A query point lies outside the valid domain."""


class InvalidSpec(RtcAbrError):
    """A synthesis spec is malformed."""


class EmptyCorpus(RtcAbrError):
    """An operation needs at least one trace."""


class FrameTooSmall(RtcAbrError):
    """Frame dimensions below the minimum for gradient computation."""


class DimensionMismatch(RtcAbrError):
    """Two frames that must share dimensions do not."""


class RangeError(RtcAbrError):
    """A frame range is empty or outside the profile."""


class CrfOutOfRange(RtcAbrError):
    """CRF outside [crf_min, crf_max]."""


class InvalidDelta(RtcAbrError):
    """CRF delta not in the action set."""


class FrameNotDelivered(RtcAbrError):
    """RTT requested for a frame that never completed delivery."""


class IntervalNotClosed(RtcAbrError):
    """Measurement requested before the interval ended."""


class ShapeMismatch(RtcAbrError):
    """Tensor shapes incompatible with the operation."""


class NonFinite(RtcAbrError):
    """A NaN or Inf appeared in a forward or backward pass."""


class IoError(RtcAbrError):
    """Checkpoint file could not be read or written."""


class VersionMismatch(IoError):
    """Checkpoint format version unsupported."""


class ChecksumMismatch(IoError):
    """Checkpoint CRC check failed."""


class ConfigError(RtcAbrError):
    """Run or training configuration is invalid."""


class MissingCheckpoint(RtcAbrError):
    """An experiment needs a checkpoint that does not exist."""


class EmptyLog(RtcAbrError):
    """A session log with no intervals cannot be summarized."""
