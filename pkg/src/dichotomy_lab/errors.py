"""Exception hierarchy shared by all modules."""


class DichotomyLabError(Exception):
    """Base class for every error raised by the package."""


class ArgumentError(DichotomyLabError, ValueError):
    pass


class WindowError(DichotomyLabError, IndexError):
    """Requested index or time lies outside the evaluable window."""


class NumericError(DichotomyLabError, ArithmeticError):
    pass


class SingularityError(NumericError):
    """Restricted propagator on the range of a projection is numerically singular."""


class ConvergenceError(NumericError):
    pass


class NonContractionError(ConvergenceError):
    pass


class DivergenceError(NumericError):
    pass


class NoDichotomyError(DichotomyLabError):
    pass


class DegeneracyError(DichotomyLabError):
    pass


class HypothesisError(DichotomyLabError):
    """A theorem hypothesis fails on the sampled data.

    ``item`` names the failed hypothesis and ``report`` carries whatever
    was measured before the failure.
    """

    def __init__(self, message, item=None, report=None):
        super().__init__(message)
        self.item = item
        self.report = report or {}


class AdmissibilityError(HypothesisError):
    pass


class RobustnessHypothesisError(HypothesisError):
    pass
