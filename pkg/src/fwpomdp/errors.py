"""Exception types raised across the package."""


class FwPomdpError(Exception):
    """Base class for all package errors."""


class ModelError(FwPomdpError, ValueError):
    """A model or parameter set violates its contract."""


class ZeroLikelihood(FwPomdpError):
    """An observation history has (numerically) zero probability.

    ``step`` is the index of the offending observation inside the history
    (0 is the initial observation), or None when not applicable.
    """

    def __init__(self, message, step=None, likelihood=0.0):
        super().__init__(message)
        self.step = step
        self.likelihood = likelihood


class CapacityExceeded(FwPomdpError):
    def __init__(self, required, limit, what="histories"):
        super().__init__(f"{what}: {required} exceeds the configured limit {limit}")
        self.required = required
        self.limit = limit


class EmptySet(FwPomdpError, ValueError):
    pass


class NotConverged(FwPomdpError):
    def __init__(self, max_iter, residual):
        super().__init__(
            f"value iteration did not converge in {max_iter} iterations "
            f"(last residual {residual:.3e})"
        )
        self.max_iter = max_iter
        self.residual = residual


class MalformedKernel(FwPomdpError, ValueError):
    pass


class DegenerateMetric(FwPomdpError, ValueError):
    pass


class PreconditionViolated(FwPomdpError, ValueError):
    """A bound's admissibility condition fails.

    ``condition`` names the inequality and ``margin`` is by how much it
    fails (nonnegative).
    """

    def __init__(self, condition, margin):
        super().__init__(f"precondition {condition} violated by {margin:.6g}")
        self.condition = condition
        self.margin = margin


class AbsoluteContinuityViolated(FwPomdpError, ValueError):
    def __init__(self, state):
        super().__init__(
            f"prior puts mass on state {state} but the anchor does not"
        )
        self.state = state


class DegenerateNormalization(FwPomdpError, ValueError):
    pass
