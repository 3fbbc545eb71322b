"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration/usage problems
(ParameterError, DataError, ArchitectureMismatchError) exit 2, runtime
failures (NumericError, checkpoint corruption/version) exit 3.
"""


class XCNNError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(XCNNError):
    """Tensor shapes do not satisfy an operation's contract."""


class ParameterError(XCNNError):
    """A hyperparameter or argument is outside its allowed range."""


class DataError(XCNNError):
    """Dataset, label, or manifest content is invalid."""


class StateError(XCNNError):
    """An operation was called out of order (e.g. backward before forward)."""


class NumericError(XCNNError):
    """A computation produced a non-finite value."""


class FormatError(XCNNError):
    """A file exists but is not in the expected format."""


class CheckpointCorruptionError(XCNNError):
    """Checkpoint bytes fail the magic or checksum test, or are truncated."""


class CheckpointVersionError(XCNNError):
    """Checkpoint declares a format version this build cannot read."""


class ArchitectureMismatchError(XCNNError):
    """Checkpoint architecture id differs from the requested one."""
