"""Exception taxonomy shared across the package.

Each class maps to one CLI exit code (see ``helios.cli``): config errors
exit 2, data errors 3, numeric/solver errors 4.
"""


class HeliosError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HeliosError):
    """Tensor shapes are incompatible with the requested operation."""


class ParameterError(HeliosError):
    """A numeric argument is outside its legal range."""


class DegenerateBatchError(HeliosError):
    """Batch statistics requested over fewer than two samples."""


class MaskingError(HeliosError):
    """An attention query has no unmasked key to attend to."""


class NumericError(HeliosError):
    """A non-finite value appeared where a finite one is required."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""


class SolverError(NumericError):
    """An iterative solver failed to converge."""


class CalibrationError(SolverError):
    """Module calibration could not reach its target bands."""


class DataError(HeliosError):
    """Dataset-level contract violation (empty, unsorted, gapped, ...)."""


class EncodingError(DataError):
    """A categorical value is outside its declared cardinality."""


class IntegrityError(DataError):
    """Record stream violates ordering or contiguity requirements."""


class SplitError(DataError):
    """No location is long enough for the requested train/test split."""


class NoDaylightError(DataError):
    """A metric over daylight points received none."""


class CheckpointFormatError(HeliosError):
    """Checkpoint bytes do not conform to the MPTF1 format."""


class ConfigError(HeliosError):
    """Configuration file or option is invalid."""
