"""Exception types raised across the package.

Every error that callers are expected to handle derives from
:class:`OscibpError`, so ``except OscibpError`` catches any pipeline
failure without masking programming mistakes (TypeError and friends).
"""


class OscibpError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfigurationError(OscibpError):
    """A configuration value is out of range or inconsistent."""


class ShortRecordError(OscibpError):
    """A record is too short for the requested filtering."""


class InsufficientPulsesError(OscibpError):
    """Too few peaks or pulses to continue the pipeline."""


class DegenerateWaveformError(OscibpError):
    """All pulse amplitudes are zero, nothing to normalize."""


class DegeneratePulseError(OscibpError):
    """A pulse has fewer than two samples and cannot be resampled."""


class ShapeError(OscibpError):
    """Tensor operands have incompatible shapes."""


class InvalidGraphError(OscibpError):
    """backward() was started from a non-scalar tensor."""


class EmptyBatchError(OscibpError):
    """A loss or training step received zero samples."""


class DivergenceError(OscibpError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class InsufficientDataError(OscibpError):
    """Not enough samples, records, or subjects for the operation."""


class IncompleteTableError(OscibpError):
    """A prediction table is missing runs that aggregation expects."""


class RatioNotReachedError(OscibpError):
    """The amplitude envelope never falls to the requested ratio."""


class ParseError(OscibpError):
    """A text input file is malformed; message names the line."""


class CheckpointError(OscibpError):
    """A checkpoint file is corrupt or has an unknown version."""
