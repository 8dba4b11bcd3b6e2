"""Adaptive payload identification and force control for a quadruped with prismatic knees."""

from acql.errors import (
    AcqlError,
    AngleNearPi,
    JointOutOfRange,
    NoStanceFeet,
    NotInStance,
    NumericalBlowup,
    QpInfeasibleUnrecovered,
    SimDiverged,
    SingularConfiguration,
    Unreachable,
)

__version__ = "0.1.0"

__all__ = [
    "AcqlError",
    "AngleNearPi",
    "JointOutOfRange",
    "NoStanceFeet",
    "NotInStance",
    "NumericalBlowup",
    "QpInfeasibleUnrecovered",
    "SimDiverged",
    "SingularConfiguration",
    "Unreachable",
]
