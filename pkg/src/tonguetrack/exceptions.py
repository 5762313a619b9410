"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
(anything raised from parsing files or validating inputs) exit 2, and
everything else exits 3.
"""


class TongueTrackError(Exception):
    """Base class for all errors raised by this package."""


class MaskError(TongueTrackError, ValueError):
    """A contour mask is empty or spans fewer than two columns."""


class SpanError(TongueTrackError, ValueError):
    """A contour covers too little of the image width to place landmarks."""


class SpacingError(TongueTrackError, ValueError):
    """Random landmark placement cannot satisfy the minimum-gap constraint."""


class FitError(TongueTrackError, ValueError):
    """Spline fitting failed (too few points or a degenerate point set)."""


class DataFormatError(TongueTrackError):
    """A dataset file on disk is missing, malformed or inconsistent."""


class CheckpointError(DataFormatError):
    """Base class for checkpoint (de)serialization failures."""


class NotACheckpointError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class UnsupportedVersionError(CheckpointError):
    """The checkpoint declares a format version this build cannot read."""


class CorruptCheckpointError(CheckpointError):
    """The checkpoint payload is truncated or internally inconsistent."""
