"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (config 2, data 3, numerical 4), so new
failure modes should subclass one of the three mid-level classes.
"""


class EsncvError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EsncvError):
    """Invalid configuration: unknown keys, inconsistent parameters."""


class DataError(EsncvError):
    """Malformed or unusable input data."""


class NumericalError(EsncvError):
    """A numerical procedure failed (singular solve, dead reservoir, ...)."""


class DimensionError(EsncvError):
    """Shape mismatch between arrays; message names expected vs actual."""


class PlanError(ConfigError):
    """Split-plan geometry that cannot be realized or violates invariants."""


class SingularSystemError(NumericalError):
    """Ridge system singular or indefinite; carries a condition diagnostic."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class SpectralRadiusError(NumericalError):
    """Spectral radius of a generated recurrent matrix could not be scaled."""
