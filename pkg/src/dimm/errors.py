"""Exception hierarchy for the dimm package.

Every error raised deliberately by this package derives from
:class:`DimmError`, so callers can catch one base class. The concrete
subclasses map onto the pipeline stages (data ingestion, partitioning,
covariance construction, block fitting, score integration, simulation)
and onto the distinct CLI exit codes documented in the README.
"""

from __future__ import annotations

__all__ = [
    "ConfigError",
    "CovarianceError",
    "DataError",
    "DimmError",
    "FitError",
    "IntegrationError",
    "PartitionError",
    "ScenarioError",
]


class DimmError(Exception):
    """Base class for all errors raised by this package."""


class DataError(DimmError):
    """Malformed panel data: bad shapes, non-finite values, broken files."""


class PartitionError(DimmError):
    """Invalid block partition (sizes, names, or structure parameters)."""


class CovarianceError(DimmError):
    """A covariance matrix could not be built or is not positive definite."""


class FitError(DimmError):
    """A block fit failed to converge or reached an invalid state.

    Carries the optimizer trace (when one exists) so callers can inspect
    how far the fit got before failing.
    """

    def __init__(self, message: str, *, trace=None) -> None:
        super().__init__(message)
        self.trace = trace


class IntegrationError(DimmError):
    """Score integration failed (singular weight or bread matrix, or a
    requested quantity is unavailable for the given block layout)."""


class ConfigError(DimmError):
    """A configuration document violates the expected schema."""


class ScenarioError(DimmError):
    """A simulation scenario failed (for example, too many replicate
    failures to report trustworthy summaries)."""
