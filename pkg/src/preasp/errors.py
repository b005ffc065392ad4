"""Exception types raised across the package."""


class PreaspError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PreaspError, ValueError):
    """Malformed waveform, metric input or argument."""


class TrainingDataError(PreaspError, ValueError):
    """Training set is empty or lacks a required class."""


class InferenceError(PreaspError, RuntimeError):
    """No valid candidate boundary pair exists."""


class ModelFormatError(PreaspError, ValueError):
    """A model file has the wrong header, version or layout."""


class DataError(PreaspError, ValueError):
    """Annotation or prediction files are inconsistent."""


class UndefinedCorrelationError(InvalidInputError):
    """Correlation requested for a sequence with zero variance."""
