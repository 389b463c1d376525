"""Exception types raised by the library."""


class FracSobError(Exception):
    """Base class for library errors."""


class InvalidParameter(FracSobError, ValueError):
    """A parameter lies outside the validated range of an operation."""


class UnsupportedKind(InvalidParameter):
    pass


class NonpositiveLength(InvalidParameter):
    pass


class PointOutOfChart(InvalidParameter):
    pass


class OrderTooSmall(InvalidParameter):
    pass


class UnderResolvedRule(FracSobError):
    """The quadrature rule cannot resolve the requested eigenfunctions."""


class TailBoundViolation(FracSobError):
    """The discarded spectral tail exceeds the configured tolerance."""


class QuadratureNotConverged(FracSobError):
    pass


class CoincidentPoints(InvalidParameter):
    pass


class NonConvergingSchedule(FracSobError):
    """Successive values along a limit schedule do not contract."""


class DiagonalCorrectionFailure(FracSobError):
    pass


class ConstantInput(InvalidParameter):
    pass


class ExponentOutOfRange(InvalidParameter):
    pass


class SupercriticalParameters(InvalidParameter):
    """``s p >= n``: no critical Sobolev exponent."""


class AmplitudeTooLarge(InvalidParameter):
    pass


class ZeroInput(InvalidParameter):
    pass


class DescentDiverged(FracSobError):
    pass


class PartitionIdentityViolated(FracSobError):
    pass


class OrthogonalityViolated(FracSobError):
    pass
