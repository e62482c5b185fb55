"""Exception hierarchy.

Every numerical failure derives from :class:`NumericalFailure` so that the
command line front-end can map it to a single exit code.
"""


class AffineLDPError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(AffineLDPError, ValueError):
    pass


class ModelFileError(AffineLDPError, ValueError):
    """Raised when a model file cannot be parsed into a model."""


class NumericalFailure(AffineLDPError, ArithmeticError):
    pass


class SingularStabilityMatrix(NumericalFailure):
    pass


class IncommensurableLattices(NumericalFailure):
    pass


class MGFDomainExceeded(NumericalFailure):
    pass


class BeyondCriticalTilt(NumericalFailure):
    """Continuation of the tilt function could not reach the requested theta.

    ``last_theta`` is the largest tilt for which a solution was found.
    """

    def __init__(self, message, last_theta=None):
        super().__init__(message)
        self.last_theta = last_theta


class JacobianSingular(NumericalFailure):
    def __init__(self, message, last_theta=None):
        super().__init__(message)
        self.last_theta = last_theta


class LevelBelowMean(NumericalFailure, ValueError):
    pass


class NoDecay(NumericalFailure):
    pass


class StiffnessFailure(NumericalFailure):
    pass


class StencilOutOfDomain(NumericalFailure):
    pass


class GrowthBoundViolated(NumericalFailure, ValueError):
    pass


class UnsupportedOrder(AffineLDPError, ValueError):
    pass


class NegativeIntensity(NumericalFailure):
    pass
