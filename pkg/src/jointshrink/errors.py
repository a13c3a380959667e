"""Exception and warning types.

Data problems derive from :class:`DataError` (CLI exit code 2), numerical
failures from :class:`NumericalError` (exit code 3).
"""


class JointShrinkError(Exception):
    """Base class for all package errors."""


class DataError(JointShrinkError, ValueError):
    pass


class NumericalError(JointShrinkError, ArithmeticError):
    pass


class ZeroVarianceColumn(DataError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"column {index} has zero variance; filter constant variables upstream")


class InsufficientObservations(DataError):
    pass


class TooFewObservations(InsufficientObservations):
    pass


class DimensionMismatch(DataError):
    pass


class SingleGroup(DataError):
    pass


class InvalidRange(DataError):
    pass


class EmptyInput(DataError):
    pass


class InfeasibleConfig(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class UnknownObservation(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"label refers to unknown observation {name!r}")


class UnlabeledObservation(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"observation {name!r} has no group label")


class GroupTooSmall(DataError):
    def __init__(self, name, n):
        self.name = name
        self.n = n
        super().__init__(f"group {name!r} has {n} observations; at least 3 are required")


class SingularMatrix(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class DegenerateObjectiveWarning(UserWarning):
    """Singular quadratic objective with tied candidate minimizers."""


class DegreesOfFreedomWarning(UserWarning):
    """Test degrees of freedom were floored; p-values are nominal only."""


class DegenerateRhoWarning(UserWarning):
    """A partial correlation reached +/-1; its p-value was set to 0."""
