"""Exception hierarchy shared by every module of the package."""


class FeatherError(Exception):
    """Base class for all package errors."""


class ShapeError(FeatherError, ValueError):
    """Array shapes do not satisfy an operation's contract."""


class DataError(FeatherError, ValueError):
    """Input data is malformed, non-finite or too short."""


class NumericError(FeatherError, ArithmeticError):
    """A computation produced NaN or Inf.

    Attributes:
        stage: name of the pipeline stage where the value appeared.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class ConfigError(FeatherError, ValueError):
    """Invalid or inconsistent configuration."""


class UsageError(FeatherError, RuntimeError):
    """An API was called in the wrong order (e.g. backward without a cache)."""


class ArchiveError(FeatherError):
    """Base class for weight-archive decoding failures."""


class BadMagicError(ArchiveError):
    pass


class UnsupportedVersionError(ArchiveError):
    pass


class ChecksumError(ArchiveError):
    pass


class CountMismatchError(ArchiveError):
    pass
