"""Kinematic and inertial model of a 3-DoF-per-leg quadruped with a prismatic knee.

Each leg is a hip roll joint about body x, a hip pitch joint about body y and a
prismatic knee that extends the foot along the rotated -z axis:

    foot = hip + Rx(roll) @ Ry(pitch) @ (0, 0, -extension)

Contact forces in this module are ground reaction forces acting on the robot,
expressed in the world frame. Joint efforts relate to them through
``tau = J^T R^T F``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from acql import so3
from acql.errors import JointOutOfRange, NoStanceFeet, SingularConfiguration, Unreachable

LEG_NAMES = ("FL", "FR", "RL", "RR")
# trot pairs: (FL, RR) and (FR, RL)
DIAGONAL_PAIRS = ((0, 3), (1, 2))
DEFAULT_ROBOT_FILE = Path(__file__).parent / "data" / "kirin.yaml"

_SINGULAR_DET = 1e-9


@dataclass(frozen=True)
class RobotModel:
    torso_inertia: np.ndarray
    link_masses: np.ndarray
    link_com_offsets: np.ndarray
    hip_mount_points: np.ndarray
    knee_travel: tuple[float, float] = (0.25, 0.55)
    roll_range: tuple[float, float] = (-2.443, 2.443)
    pitch_range: tuple[float, float] = (-math.pi, math.pi)
    friction: float = 0.6
    tau_min: np.ndarray = field(default_factory=lambda: np.array([-200.0, -200.0, -3000.0]))
    tau_max: np.ndarray = field(default_factory=lambda: np.array([200.0, 200.0, 3000.0]))
    gravity: float = 9.81
    name: str = "robot"

    def __post_init__(self):
        inertia = np.array(self.torso_inertia, dtype=float).reshape(3, 3)
        masses = np.array(self.link_masses, dtype=float).reshape(-1)
        offsets = np.array(self.link_com_offsets, dtype=float).reshape(-1, 3)
        hips = np.array(self.hip_mount_points, dtype=float).reshape(4, 3)
        tau_min = np.broadcast_to(np.array(self.tau_min, dtype=float), (3,)).copy()
        tau_max = np.broadcast_to(np.array(self.tau_max, dtype=float), (3,)).copy()
        if len(masses) != len(offsets):
            raise ValueError("one CoM offset per link mass is required")
        if np.any(masses < 0.0):
            raise ValueError("link masses must be non-negative")
        if not np.allclose(inertia, inertia.T, atol=1e-12) or np.any(np.linalg.eigvalsh(inertia) <= 0.0):
            raise ValueError("torso inertia must be symmetric positive definite")
        if self.friction <= 0.0:
            raise ValueError("friction coefficient must be positive")
        if np.any(tau_min >= tau_max):
            raise ValueError("tau_min must be below tau_max")
        lo, hi = self.knee_travel
        if not (0.0 <= lo < hi) or hi - lo > 0.3 + 1e-12:
            raise ValueError("knee travel must be a non-empty interval spanning at most 0.3 m")
        for name, value in (
            ("torso_inertia", inertia),
            ("link_masses", masses),
            ("link_com_offsets", offsets),
            ("hip_mount_points", hips),
            ("tau_min", tau_min),
            ("tau_max", tau_max),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.link_masses))

    @property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.torso_inertia)

    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return np.tile(self.tau_min, 4), np.tile(self.tau_max, 4)


def load_robot(path=None) -> RobotModel:
    """Read a robot description YAML file (see README for the schema)."""
    path = Path(path) if path is not None else DEFAULT_ROBOT_FILE
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    ranges = doc.get("joint_ranges", {})
    links = doc["links"]
    return RobotModel(
        torso_inertia=np.array(doc["torso_inertia"], dtype=float),
        link_masses=np.array([link["mass"] for link in links], dtype=float),
        link_com_offsets=np.array([link["com"] for link in links], dtype=float),
        hip_mount_points=np.array(doc["hip_mount_points"], dtype=float),
        knee_travel=tuple(ranges.get("knee", (0.25, 0.55))),
        roll_range=tuple(ranges.get("hip_roll", (-2.443, 2.443))),
        pitch_range=tuple(ranges.get("hip_pitch", (-math.pi, math.pi))),
        friction=float(doc.get("friction", 0.6)),
        tau_min=np.array(doc.get("tau_min", [-200.0, -200.0, -3000.0]), dtype=float),
        tau_max=np.array(doc.get("tau_max", [200.0, 200.0, 3000.0]), dtype=float),
        gravity=float(doc.get("gravity", 9.81)),
        name=str(doc.get("name", path.stem)),
    )


@dataclass
class RobotState:
    r_b: np.ndarray
    v_b: np.ndarray
    q_b: np.ndarray
    omega: np.ndarray
    a_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_q: np.ndarray = field(default_factory=lambda: np.zeros(12))
    joint_qd: np.ndarray = field(default_factory=lambda: np.zeros(12))
    joint_tau: np.ndarray = field(default_factory=lambda: np.zeros(12))

    @property
    def rotation(self) -> np.ndarray:
        return so3.quat_to_rot(self.q_b)

    def copy(self) -> "RobotState":
        return RobotState(
            self.r_b.copy(), self.v_b.copy(), self.q_b.copy(), self.omega.copy(),
            self.a_b.copy(), self.joint_q.copy(), self.joint_qd.copy(), self.joint_tau.copy(),
        )


@dataclass
class ContactState:
    stance: np.ndarray
    foot_pos_body: np.ndarray
    foot_pos_world: np.ndarray

    @property
    def stance_legs(self) -> list[int]:
        return [i for i in range(4) if self.stance[i]]


def _check_leg_joints(model: RobotModel, q3) -> None:
    roll, pitch, ext = q3
    lo, hi = model.knee_travel
    if not (lo - 1e-12 <= ext <= hi + 1e-12):
        raise JointOutOfRange(f"knee extension {ext:.4f} m outside [{lo}, {hi}]")
    if not (model.roll_range[0] <= roll <= model.roll_range[1]):
        raise JointOutOfRange(f"hip roll {roll:.4f} rad out of range")
    if not (model.pitch_range[0] <= pitch <= model.pitch_range[1]):
        raise JointOutOfRange(f"hip pitch {pitch:.4f} rad out of range")


def leg_chain(q3) -> np.ndarray:
    """Foot position relative to the hip mount, body frame."""
    roll, pitch, ext = float(q3[0]), float(q3[1]), float(q3[2])
    sa, ca = math.sin(roll), math.cos(roll)
    sb, cb = math.sin(pitch), math.cos(pitch)
    return np.array([-ext * sb, ext * cb * sa, -ext * cb * ca])


def forward_kinematics(model: RobotModel, joint_q) -> np.ndarray:
    """Body-frame foot positions, shape (4, 3)."""
    joint_q = np.asarray(joint_q, dtype=float).reshape(4, 3)
    feet = np.empty((4, 3))
    for leg in range(4):
        _check_leg_joints(model, joint_q[leg])
        feet[leg] = model.hip_mount_points[leg] + leg_chain(joint_q[leg])
    return feet


def inverse_kinematics(model: RobotModel, foot_body, leg: int) -> np.ndarray:
    p = np.asarray(foot_body, dtype=float) - model.hip_mount_points[leg]
    ext = math.sqrt(float(p @ p))
    lo, hi = model.knee_travel
    if not (lo - 1e-12 <= ext <= hi + 1e-12):
        raise Unreachable(f"target needs knee extension {ext:.4f} m outside [{lo}, {hi}]")
    pitch = math.asin(max(-1.0, min(1.0, -p[0] / ext)))
    roll = math.atan2(p[1], -p[2])
    q3 = np.array([roll, pitch, ext])
    try:
        _check_leg_joints(model, q3)
    except JointOutOfRange as exc:
        raise Unreachable(str(exc)) from exc
    return q3


def leg_jacobian(q3) -> np.ndarray:
    """d(foot)/d(roll, pitch, extension) without the singularity check."""
    roll, pitch, ext = float(q3[0]), float(q3[1]), float(q3[2])
    sa, ca = math.sin(roll), math.cos(roll)
    sb, cb = math.sin(pitch), math.cos(pitch)
    return np.array(
        [
            [0.0, -ext * cb, -sb],
            [ext * cb * ca, -ext * sb * sa, cb * sa],
            [ext * cb * sa, ext * sb * ca, -cb * ca],
        ]
    )


def foot_jacobian(model: RobotModel, q3) -> np.ndarray:
    J = leg_jacobian(q3)
    # |det J| = l^2 |cos(pitch)|
    if abs(float(q3[2]) ** 2 * math.cos(float(q3[1]))) < _SINGULAR_DET:
        raise SingularConfiguration(f"|det J| below {_SINGULAR_DET:g} at q={np.asarray(q3)}")
    return J


def torques_from_forces(model: RobotModel, q_b, joint_q, stance, forces) -> np.ndarray:
    """tau_leg = J^T R^T F for stance legs; swing legs get zero here."""
    R = so3.quat_to_rot(q_b)
    joint_q = np.asarray(joint_q, dtype=float).reshape(4, 3)
    forces = np.asarray(forces, dtype=float).reshape(4, 3)
    tau = np.zeros((4, 3))
    for leg in range(4):
        if stance[leg]:
            J = foot_jacobian(model, joint_q[leg])
            tau[leg] = J.T @ (R.T @ forces[leg])
    return tau.reshape(12)


def contact_forces_from_torques(model: RobotModel, state: RobotState, contact: ContactState) -> np.ndarray:
    """Invert the leg statics: F = R J^-T tau per stance leg."""
    R = state.rotation
    joint_q = np.asarray(state.joint_q, dtype=float).reshape(4, 3)
    tau = np.asarray(state.joint_tau, dtype=float).reshape(4, 3)
    forces = np.zeros((4, 3))
    for leg in range(4):
        if contact.stance[leg]:
            J = foot_jacobian(model, joint_q[leg])
            forces[leg] = R @ np.linalg.solve(J.T, tau[leg])
    return forces


def gravity_terms(model: RobotModel, R) -> tuple[np.ndarray, np.ndarray]:
    g_vec = np.array([0.0, 0.0, -model.gravity])
    force = model.total_mass * g_vec
    weighted = (model.link_masses[:, None] * model.link_com_offsets).sum(axis=0)
    moment = so3.cross(np.asarray(R) @ weighted, g_vec)
    return force, moment


def gravity_feedforward(model: RobotModel, state: RobotState) -> tuple[np.ndarray, np.ndarray]:
    """Link gravity force (pointing down) and its moment about the torso origin, world frame."""
    return gravity_terms(model, state.rotation)


def body_odometry(model: RobotModel, joint_q, joint_qd, contact: ContactState, q_b, omega=None):
    """Torso position and velocity from stance-leg kinematics.

    ``contact.foot_pos_world`` holds the anchor of every stance foot; anchors
    are placed so that the initial stance centroid is the world origin.
    """
    stance = [i for i in range(4) if contact.stance[i]]
    if not stance:
        raise NoStanceFeet("odometry needs at least one stance foot")
    R = so3.quat_to_rot(q_b)
    omega = np.zeros(3) if omega is None else np.asarray(omega, dtype=float)
    joint_q = np.asarray(joint_q, dtype=float).reshape(4, 3)
    joint_qd = np.asarray(joint_qd, dtype=float).reshape(4, 3)
    r_sum = np.zeros(3)
    v_sum = np.zeros(3)
    for leg in stance:
        p_body = model.hip_mount_points[leg] + leg_chain(joint_q[leg])
        p_world = R @ p_body
        r_sum += contact.foot_pos_world[leg] - p_world
        v_sum += -(R @ (leg_jacobian(joint_q[leg]) @ joint_qd[leg])) - so3.cross(omega, p_world)
    n = len(stance)
    return r_sum / n, v_sum / n


def stance_anchors(model: RobotModel, joint_q, q_b, stance) -> np.ndarray:
    """World anchors for a first contact: stance centroid at the ground origin."""
    R = so3.quat_to_rot(q_b)
    feet = np.array([R @ p for p in forward_kinematics(model, joint_q)])
    idx = [i for i in range(4) if stance[i]]
    if not idx:
        raise NoStanceFeet("no stance feet to anchor")
    return feet - feet[idx].mean(axis=0)


class AccelerationFilter:
    """First difference of velocity averaged over the last ``window`` samples."""

    def __init__(self, dt: float, window: int = 10):
        self.dt = float(dt)
        self.window = int(window)
        self._history: list[np.ndarray] = []

    def update(self, v) -> np.ndarray:
        self._history.append(np.array(v, dtype=float))
        if len(self._history) > self.window + 1:
            self._history.pop(0)
        if len(self._history) < 2:
            return np.zeros(3)
        span = len(self._history) - 1
        return (self._history[-1] - self._history[0]) / (span * self.dt)
