"""Exception types raised by the solvers and certifiers."""


class L0OptError(Exception):
    """Base class for library errors."""


class ConvergenceError(L0OptError):
    """An iterative method hit its iteration cap before reaching tolerance."""

    def __init__(self, message, gauge=None, iterations=None):
        super().__init__(message)
        self.gauge = gauge
        self.iterations = iterations


class DivergenceError(ConvergenceError):
    """Iterates blew up, usually because a declared coercivity does not hold."""


class HypothesisError(L0OptError):
    """A hypothesis required by a solver is not met."""


class InfeasibleError(L0OptError):
    """A constraint system has no solution on some atom."""

    def __init__(self, message, atom=None):
        super().__init__(message)
        self.atom = atom
