"""
Exception hierarchy for the fractional fast diffusion lab.

Every failure raised on purpose by the package derives from FfdeError so the
CLI can separate expected lab failures from programming errors.
"""

from __future__ import annotations


class FfdeError(Exception):
    """Base class for all errors raised by ffde_lab."""


class GridError(FfdeError, ValueError):
    """Invalid grid dimensions or node counts."""


class OperatorConstructionError(FfdeError, ValueError):
    """An operator could not be assembled for the requested parameters."""


class NotPositiveDefinite(FfdeError):
    """A matrix that must be symmetric positive definite is not."""


class TooFewNodes(FfdeError):
    """A fitting window holds too few grid nodes."""


class FieldError(FfdeError, ValueError):
    """A field is malformed (wrong length, NaN or Inf entries, zero where forbidden)."""


class BrokenQuadraticForm(FfdeError):
    """A quadratic form that must be nonnegative evaluated negative."""


class NewtonDivergence(FfdeError):
    """The proximal Newton solve did not converge."""


class InsufficientData(FfdeError):
    """Not enough trajectory data to fit or check a law."""


class ProfileNotFound(FfdeError):
    """No separable profile could be computed."""


class MismatchedTrajectories(FfdeError):
    """Two trajectories cannot be compared snapshot by snapshot."""


class StorageFormatError(FfdeError):
    """A result file exists but does not have the expected layout."""


class UnknownCheck(FfdeError, ValueError):
    """A check name is not present in the verification registry."""
