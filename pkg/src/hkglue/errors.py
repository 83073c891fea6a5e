"""Exception hierarchy shared by all modules."""


class HKGlueError(Exception):
    """Base class for all package errors."""


class ConfigError(HKGlueError):
    """Invalid charge configuration or run configuration."""


class SingularityError(HKGlueError):
    """Evaluation requested at (or numerically too close to) a singular point."""


class AccuracyError(HKGlueError):
    """A numerical tolerance could not be met with the given parameters."""


class GeometryError(HKGlueError):
    """A requested region collides with puncture exclusion balls or is empty."""


class ThresholdNotFoundError(HKGlueError):
    """A parameter scan finished without finding an admissible value."""


class NotDefiniteError(HKGlueError):
    """A triple of 2-forms fails to span a positive definite 3-plane."""


class DomainError(HKGlueError):
    """Input lies outside the domain of the operation (e.g. h <= 0)."""


class DegenerateBasisError(HKGlueError):
    """A triple is too far from an SU(2)-structure for the requested decomposition."""


class BoundViolatedError(HKGlueError):
    """A decay or size bound required by a construction does not hold."""


class ConvergenceError(HKGlueError):
    """An iterative method failed to converge.

    Attributes
    ----------
    trace : list of float
        Residual history up to the point of failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class HypothesisError(HKGlueError):
    """A hypothesis of a fixed-point theorem is violated; the solver refuses to run."""


class UnsupportedRegionError(HKGlueError):
    """A point lies in a region for which no model is configured."""


class FitError(HKGlueError):
    """A regression could not be performed (too few points, degenerate data)."""


class CacheError(HKGlueError):
    """The cache directory cannot be used."""
