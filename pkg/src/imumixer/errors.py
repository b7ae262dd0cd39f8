"""Exception hierarchy shared by every imumixer module."""


class ImuMixerError(Exception):
    """Base class for all package errors."""


class DimensionError(ImuMixerError, ValueError):
    pass


class RankError(ImuMixerError, ValueError):
    pass


class DegenerateAxisError(ImuMixerError, ValueError):
    pass


class EmptyAxisError(ImuMixerError, ValueError):
    pass


class LabelError(ImuMixerError, ValueError):
    pass


class TapeError(ImuMixerError, RuntimeError):
    pass


class NonFiniteError(ImuMixerError, FloatingPointError):
    """A NaN or Inf showed up where a finite value was required."""

    def __init__(self, message, *, name=None, step=None, epoch=None, batch=None):
        super().__init__(message)
        self.name = name
        self.step = step
        self.epoch = epoch
        self.batch = batch


class ConfigError(ImuMixerError, ValueError):
    pass


class UsageError(ImuMixerError, ValueError):
    pass


class CheckpointError(ImuMixerError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointLengthError(CheckpointError):
    """Config and stored parameter lengths disagree."""


class SchemaError(ImuMixerError, ValueError):
    def __init__(self, message, *, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class RecordError(ImuMixerError, ValueError):
    def __init__(self, message, *, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ProtocolError(ImuMixerError, ValueError):
    pass


class StreamOrderError(ImuMixerError, ValueError):
    pass
