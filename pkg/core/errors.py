"""
Kinetic Atlas Error Hierarchy
=============================
Every failure raised by the library derives from AtlasError, so callers
can catch the whole family at once. The CLI maps ConfigurationError to
exit code 2 and data failures to exit code 3.
"""

from typing import Optional


class AtlasError(Exception):
    """Root of all Kinetic Atlas errors."""


class DomainError(AtlasError, ValueError):
    """Input outside the domain of an operation (e.g. negative FCA value)."""


class DegenerateMarginError(AtlasError, ValueError):
    """All-zero row or column in a correspondence table, or zero row sum."""


class DimensionMismatchError(AtlasError, ValueError):
    """Rasters or images that must share a shape do not."""


class UndefinedSnrError(AtlasError, ValueError):
    """SNR requested on a constant raster."""


class RasterTooSmallError(AtlasError, ValueError):
    """Raster smaller than the covariance lag window."""


class ParameterError(AtlasError, ValueError):
    """Scalar parameter outside its precondition."""


class EmptyMarkersError(AtlasError, ValueError):
    """No marker could be placed (no marker label, or no eligible component)."""


class InsufficientMinimaError(AtlasError, ValueError):
    """Fewer relief minima than requested regions."""


class ConfigurationError(AtlasError):
    """Invalid configuration file, flag or missing required input."""


class DataError(AtlasError):
    """Unreadable or malformed input file."""


class StageError(AtlasError):
    """A pipeline stage failed; keeps the stage name and the original cause."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

    @property
    def exit_code(self) -> int:
        return 2 if isinstance(self.cause, ConfigurationError) else 3


def exit_code_for(error: Optional[BaseException]) -> int:
    """CLI exit code for an error (0 when there is none)."""
    if error is None:
        return 0
    if isinstance(error, StageError):
        return error.exit_code
    if isinstance(error, ConfigurationError):
        return 2
    return 3
