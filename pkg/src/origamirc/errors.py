"""Exception types shared across the package."""


class OrigamiError(Exception):
    """Base class for all package errors."""


class DesignError(OrigamiError):
    """An invalid design parameter; the message names the violated field."""


class GeometryError(OrigamiError):
    """Degenerate or inconsistent geometry (zero-area wing, bad covariance...)."""


class SimulationDiverged(OrigamiError):
    """The time integration produced non-finite or unbounded values."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class TrainingError(OrigamiError):
    """Readout training failed (degenerate state matrix, NaNs, misalignment)."""


class ConfigError(OrigamiError):
    """Invalid run configuration; the message names the offending field path."""
