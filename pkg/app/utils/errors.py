"""
Custom exceptions for validation, data and numeric failures.

Each family carries the process exit code the CLI reports for it.
"""


class MatsegError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ValidationError(MatsegError):
    """Raised when parameters or preconditions are invalid."""

    exit_code = 2


class InvalidWindowError(ValidationError):
    """Raised when a lag window does not fit the sample length."""

    pass


class IncomparableSegmentationError(ValidationError):
    """Raised when two segmentations cannot be compared block by block."""

    pass


class DataError(MatsegError):
    """Raised when input data is malformed or unusable."""

    exit_code = 3


class MalformedInputError(DataError):
    """Raised when a CSV or JSON input does not follow the expected layout."""

    pass


class NonFiniteError(DataError):
    """Raised when an array holds NaN or infinite entries."""

    pass


class InsufficientDataError(DataError):
    """Raised when a series is too short for the requested computation."""

    pass


class NumericError(MatsegError):
    """Raised when a numerical routine cannot produce a valid result."""

    exit_code = 4


class NotPositiveSemidefiniteError(NumericError):
    """Raised when a covariance-type matrix has clearly negative eigenvalues."""

    pass
