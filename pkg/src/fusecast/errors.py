"""Exception types shared across the package."""


class FusecastError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(FusecastError):
    """A CSV cell could not be parsed; carries row/column context."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MalformedSeries(FusecastError):
    """Timestamps are not strictly increasing with a constant step."""


class TooShort(FusecastError):
    """Input series has fewer than two rows."""


class SplitTooShort(FusecastError):
    """A split cannot hold one full context+forecast window."""


class ShapeError(FusecastError):
    """Array dimensions do not match the declared contract."""


class DegenerateChannel(FusecastError):
    """A channel has zero variance on the training range."""


class SegmentTooLong(FusecastError):
    """Segment length exceeds the series being partitioned."""


class EmptyPrompt(FusecastError):
    """Prompt contains no encodable tokens."""


class CacheMiss(FusecastError):
    """A prompt was not found in the embedding cache."""


class CorruptCache(FusecastError):
    """Cache file holds conflicting vectors for one key."""


class TraceError(FusecastError):
    """Forward trace does not match the parameters handed to backward."""


class NonFiniteGradient(FusecastError):
    """A gradient turned NaN/inf during optimization."""

    def __init__(self, message, param=None):
        super().__init__(message)
        self.param = param


class InvalidHorizon(FusecastError):
    """Requested forecast horizon is not a positive integer."""


class ConfigError(FusecastError):
    """Unknown or invalid configuration key/value."""
