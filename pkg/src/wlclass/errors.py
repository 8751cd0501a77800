"""Typed error hierarchy shared across the package.

Every failure mode surfaces as a subclass of WlclassError so callers (and
the CLI exit-code mapping) can distinguish usage errors, data errors, and
numerical non-convergence without string matching.
"""


class WlclassError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(WlclassError):
    """Bad invocation: unknown flag, missing required argument."""


class DataError(WlclassError):
    """Input data violates a documented contract."""


class ConvergenceError(WlclassError):
    """An iterative solver failed to reach its tolerance."""


# --- array / archive parsing ---

class BadMagicError(DataError):
    """The first bytes of a serialized array are not the expected magic."""


class UnsupportedVersionError(DataError):
    """Array format version is not one this parser supports."""


class MalformedHeaderError(DataError):
    """Array header is truncated, unparseable, or inconsistent."""


class UnsupportedDtypeError(DataError):
    """Array element type is outside the supported set."""


class MalformedArchiveError(DataError):
    """Archive container is not a readable zip of serialized arrays."""


class MissingKeyError(DataError):
    """A required archive member is absent."""

    def __init__(self, key: str):
        super().__init__(f"archive is missing required key {key!r}")
        self.key = key


class ShapeMismatchError(DataError):
    """Array shapes violate the dataset contract."""


class LabelOutOfRangeError(DataError):
    """A class label falls outside the allowed range."""


class DtypeMismatchError(DataError):
    """An archive member has the wrong element type for its role."""


class ArchiveIoError(DataError):
    """Reading or writing the archive file failed at the OS level."""


class SchemaMismatchError(DataError):
    """Telemetry CSV columns differ from the expected sensor schema."""


class EmptyFileError(DataError):
    """Input file contains no usable rows."""


# --- windowing ---

class TooShortError(DataError):
    """Trial has fewer samples than the requested window length."""

    def __init__(self, n_samples: int, length: int):
        super().__init__(f"trial has {n_samples} samples, window needs {length}")
        self.n_samples = n_samples
        self.length = length


class TooFewTrialsError(DataError):
    """A class cannot be represented in both splits."""


# --- features ---

class DegenerateInputError(DataError):
    """Too little data to fit the requested statistic."""


# --- classifiers ---

class EmptyInputError(DataError):
    """Training was invoked with no rows."""


class ClassAbsentError(DataError):
    """A class index has no training rows."""


class NoConvergenceError(ConvergenceError):
    """Solver hit its iteration budget before meeting tolerance."""


class ModelFormatError(DataError):
    """Serialized model bytes are not a valid model file."""


# --- model selection ---

class BadKError(DataError):
    """Fold count is incompatible with the sample count."""


class MissingArchiveError(DataError):
    """A dataset named in a reproduction manifest has no readable file."""


# --- synthesis ---

class NotPositiveDefiniteError(DataError):
    """A correlation matrix is not symmetric positive-definite."""
