"""Exception types shared across the package."""


class CrossError(Exception):
    """Base class for all crossloc errors."""


class AngleNearPi(CrossError, ValueError):
    """Rotation angle too close to pi for the principal log branch."""


class NoConvergence(CrossError, RuntimeError):
    """Iterative routine hit its iteration cap."""


class ZeroMass(CrossError, ArithmeticError):
    """Mixture total weight collapsed to (numerically) zero."""


class EmptyCandidates(CrossError, ValueError):
    """No measurement candidates survived this step."""


class UnknownNode(CrossError, KeyError):
    pass


class EmptyGraph(CrossError, ValueError):
    pass


class ChartInvalid(CrossError, ValueError):
    """Two poses are too far apart for a shared tangent chart."""


class SingularNormalEquations(CrossError, RuntimeError):
    pass


class NullDead(CrossError, RuntimeError):
    """The null hypothesis (id 0) is no longer alive."""


class ConfigError(CrossError, ValueError):
    """Invalid benchmark or scenario configuration.

    ``where`` is a human-readable locator such as ``"line 3"`` or
    ``"methods[1]"``.
    """

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class InconsistentMerge(CrossError, RuntimeError):
    """Jointly optimised branches fail the chi-square consistency test."""
