"""Exception hierarchy shared across the package."""


class PerfctlError(Exception):
    """Base class for all errors raised by perfctl."""


class DimensionMismatchError(PerfctlError, ValueError):
    """An array argument does not have the shape the model requires."""


class InsufficientSamplesError(PerfctlError):
    """The calibration sample is too small for the requested confidence level."""

    def __init__(self, n, k, message=None):
        self.n = n
        self.k = k
        super().__init__(
            message
            or f"need order statistic k={k} but only {n} samples are available"
        )


class SamplingError(PerfctlError):
    """A user-supplied noise sampler failed or returned malformed draws."""


class ConvergenceError(PerfctlError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    Carries the best iterate found so callers can inspect partial progress.
    """

    def __init__(self, message, best=None, history=None):
        self.best = best
        self.history = history
        super().__init__(message)


class NonContractionError(PerfctlError):
    """A fixed-point iteration failed to contract (divergence or cycling)."""

    def __init__(self, message, history=None):
        self.history = history
        super().__init__(message)


class ConfigError(PerfctlError):
    """A run configuration is missing fields or fails schema validation."""
