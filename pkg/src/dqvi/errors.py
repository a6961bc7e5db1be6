"""Exception hierarchy shared by the solver modules."""


class DqviError(Exception):
    """Base class for all errors raised by :mod:`dqvi`."""


class RejectedInput(DqviError, ValueError):
    """Input violates a precondition (shape, sign, symmetry, ...)."""


class InfeasibleProblem(DqviError):
    """The declared constants violate the contraction margin ``m_C > alpha_1``."""


class BufferOverflow(DqviError):
    """More samples appended to a history buffer than the grid can hold."""


class StepFailure(DqviError):
    """A time step could not be completed.

    Attributes
    ----------
    step : int or None
        Index of the failing time node.
    reason : str
        Short machine-friendly reason.
    diagnostics : dict
        Constants and residual ratios observed up to the failure.
    """

    def __init__(self, message, step=None, reason="", diagnostics=None):
        super().__init__(message)
        self.step = step
        self.reason = reason
        self.diagnostics = dict(diagnostics or {})


class OracleInvalid(DqviError):
    """A reference computation left its domain of validity."""
