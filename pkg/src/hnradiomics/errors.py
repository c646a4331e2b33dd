"""Exception hierarchy shared across the package."""


class RadiomicsError(Exception):
    """Base class for all errors raised by hnradiomics."""


class VolumeFormatError(RadiomicsError):
    """Malformed volume file header."""


class SizeMismatchError(VolumeFormatError):
    """Payload length disagrees with the declared dims."""


class NonFiniteError(RadiomicsError):
    """Volume data contains NaN or infinite values."""


class DegenerateRoiError(RadiomicsError):
    """An ROI is empty (or became empty after resampling)."""


class UndefinedStatisticError(RadiomicsError):
    """A statistic is undefined for the given input (constant data, one class, no pairs)."""


class ConvergenceError(RadiomicsError):
    """An iterative fit failed to converge.

    The last iterate is kept on ``last_iterate`` so callers can inspect it.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ValidationError(RadiomicsError):
    """Invalid user-supplied input (manifest, config, clinical vocabulary)."""


class LeakageError(RadiomicsError):
    """A test-tagged patient reached a training-only code path."""


class SchemaError(RadiomicsError):
    """A feature row does not match a model's feature schema."""
