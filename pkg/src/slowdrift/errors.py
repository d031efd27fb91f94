"""Exception and warning types raised across the toolkit."""


class SlowDriftError(Exception):
    """Base class for all toolkit errors."""


class EvaluationError(SlowDriftError):
    """A user-supplied evaluator returned non-finite output."""


class ModelError(SlowDriftError):
    pass


class DimensionError(SlowDriftError, ValueError):
    pass


class StiffnessError(SlowDriftError):
    """Step size underflow during adaptive integration."""


class DivergenceError(SlowDriftError):
    pass


class NoConvergence(SlowDriftError):
    pass


class SingularJacobian(SlowDriftError):
    pass


class EnergyMismatch(SlowDriftError):
    pass


class AccuracyError(SlowDriftError):
    pass


class ContinuationBreakdown(SlowDriftError):
    """Raised when continuation over a grid fails.

    ``frontier`` holds the indices of the nodes that were solved before the
    breakdown.
    """

    def __init__(self, message, frontier=None):
        super().__init__(message)
        self.frontier = frontier if frontier is not None else []


class DomainError(SlowDriftError, ValueError):
    pass


class DomainExit(SlowDriftError):
    def __init__(self, message, tau_exit=None):
        super().__init__(message)
        self.tau_exit = tau_exit


class SegmentExit(SlowDriftError):
    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class NonIncreasingBreakpoints(SlowDriftError, ValueError):
    pass


class NotAccessible(SlowDriftError):
    pass


class PreconditionError(SlowDriftError, ValueError):
    pass


class ParameterError(SlowDriftError, ValueError):
    pass


class NonConvergence(SlowDriftError):
    pass


class SlowMapNotInvertible(SlowDriftError):
    pass


class SurfaceWindowExceeded(SlowDriftError):
    pass


class BlockMismatch(SlowDriftError, ValueError):
    pass


class EmptyBlock(SlowDriftError, ValueError):
    pass


class ConfigError(SlowDriftError, ValueError):
    pass


class TangencyWarning(UserWarning):
    """A section crossing where the flow is nearly tangent to the section."""
