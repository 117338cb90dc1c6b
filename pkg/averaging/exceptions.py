"""
Exception hierarchy for the averaging core.

Every error raised by the numerical modules derives from ``AveragingError`` so
callers (management commands, celery tasks, API views) can catch one type and
decide how to report it.
"""


class AveragingError(Exception):
    """Wrapper for recoverable averaging errors."""


class ArgumentError(AveragingError, ValueError):
    """An argument has the wrong shape, range or value."""


class SimplexError(ArgumentError):
    """A probability vector is not on the simplex within tolerance."""


class TaskError(AveragingError):
    """Operation is not defined for the dataset's task (classification/regression)."""


class FitError(AveragingError):
    """A base predictor could not be fitted."""


class TrainingError(AveragingError):
    """Gradient training produced a non-finite objective."""


class SchemaError(AveragingError):
    """A CSV file does not match the expected column schema."""


class DataFormatError(AveragingError):
    """A data file is empty or contains unparseable cells."""
