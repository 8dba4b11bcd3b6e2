class AcqlError(Exception):
    pass


class AngleNearPi(AcqlError, ValueError):
    """Rotation angle too close to pi for the logarithm to be well defined."""


class JointOutOfRange(AcqlError, ValueError):
    pass


class Unreachable(AcqlError, ValueError):
    pass


class SingularConfiguration(AcqlError, ArithmeticError):
    pass


class NoStanceFeet(AcqlError, ValueError):
    pass


class NotInStance(AcqlError):
    """Mass estimation needs all four feet on the ground."""


class NumericalBlowup(AcqlError, ArithmeticError):
    pass


class SimDiverged(AcqlError):
    pass


class QpInfeasibleUnrecovered(AcqlError):
    pass
