"""Exception hierarchy shared across the package."""


class ConstrainedNodeError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ConstrainedNodeError, ValueError):
    pass


class ContractError(ConstrainedNodeError, ValueError):
    """An operation was called outside its preconditions."""


class DivergenceError(ConstrainedNodeError, ArithmeticError):
    """A numerical quantity became non-finite.

    ``step`` is the solver step or training iteration where it first happened;
    ``trace`` optionally carries whatever was recorded up to the failure.
    """

    def __init__(self, message, step=None, trace=None):
        super().__init__(message)
        self.step = step
        self.trace = trace


class StiffnessError(ConstrainedNodeError, ArithmeticError):
    """Adaptive step size collapsed below the allowed minimum."""


class NonConvergenceError(ConstrainedNodeError, RuntimeError):
    """Admissibility stage hit its iteration cap without reaching ``tol``."""

    def __init__(self, message, best_loss=None, iterations=None):
        super().__init__(message)
        self.best_loss = best_loss
        self.iterations = iterations


class ParseError(ConstrainedNodeError, ValueError):
    """Malformed file. ``offset`` is a byte offset or line number."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class SpecMismatchError(ConstrainedNodeError, ValueError):
    pass


class AlignmentError(ConstrainedNodeError, ValueError):
    pass


class ConfigError(ConstrainedNodeError, ValueError):
    pass
