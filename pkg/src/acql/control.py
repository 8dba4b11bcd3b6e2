"""Body wrench PID + feedforward and QP distribution of the wrench over stance feet.

Sign conventions: gravity is ``g_vec = (0, 0, -g)``. The body wrench is what the
feet must exert on the torso, so every gravity feedforward enters with a minus
sign: ``F_b`` contains ``-(m + m_p) g_vec`` (an upward support force) and ``T_b``
contains ``-sum(r_i x m_i g_vec) - tau_p``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from acql import robot as rm
from acql import so3
from acql.estimator import PayloadEstimate
from acql.errors import NoStanceFeet
from acql.qp import QpProblem, QpSolution, QpSolver, QpStatus

log = logging.getLogger(__name__)


def _diag(v, size=3) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return float(v) * np.eye(size)
    if v.ndim == 1:
        return np.diag(v)
    return v


@dataclass
class GainSet:
    Kp_f: np.ndarray = field(default_factory=lambda: 300.0 * np.eye(3))
    Ki_f: np.ndarray = field(default_factory=lambda: 30.0 * np.eye(3))
    Kd_f: np.ndarray = field(default_factory=lambda: 30.0 * np.eye(3))
    Kp_t: np.ndarray = field(default_factory=lambda: 200.0 * np.eye(3))
    Ki_t: np.ndarray = field(default_factory=lambda: 20.0 * np.eye(3))
    Kd_t: np.ndarray = field(default_factory=lambda: 20.0 * np.eye(3))
    Q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 1.0, 10.0, 10.0, 10.0]))
    R_weight: float = 1e-3
    force_clamp_ratio: float = 0.3
    torque_clamp: float = 50.0

    def __post_init__(self):
        for name in ("Kp_f", "Ki_f", "Kd_f", "Kp_t", "Ki_t", "Kd_t"):
            value = _diag(getattr(self, name))
            if np.any(np.diag(value) < 0.0):
                raise ValueError(f"{name} must be non-negative")
            setattr(self, name, value)
        self.Q = _diag(self.Q, 6)
        if np.any(np.diag(self.Q) < 0.0):
            raise ValueError("Q must be positive semidefinite")
        if self.R_weight < 0.0:
            raise ValueError("R weight must be non-negative")

    def R(self, n_vars: int) -> np.ndarray:
        return self.R_weight * np.eye(n_vars)


@dataclass
class BodyWrench:
    F_b: np.ndarray
    T_b: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.F_b, self.T_b])


@dataclass
class MotionTarget:
    r_d: np.ndarray
    q_d: np.ndarray
    v_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_d: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q_d = so3.quat_normalize(self.q_d)


@dataclass
class PidIntegrals:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_e_r: np.ndarray | None = None
    last_e_q: np.ndarray | None = None


def _clamped_integral(acc, e_prev, e, dt, gain, limit):
    acc = acc + 0.5 * (e_prev + e) * dt
    k = np.diag(gain)
    bound = np.where(k > 0.0, limit / np.where(k > 0.0, k, 1.0), np.inf)
    return np.clip(acc, -bound, bound)


def compute_body_wrench(
    target: MotionTarget,
    state: rm.RobotState,
    gains: GainSet,
    grav: tuple[np.ndarray, np.ndarray],
    payload: PayloadEstimate,
    dt: float,
    integrals: PidIntegrals | None = None,
    gravity: float = 9.81,
    hold_torque_integral: bool = False,
) -> BodyWrench:
    """PID tracking plus gravity and payload feedforward.

    ``grav`` is the ``gravity_feedforward`` pair (link weight, link gravity
    moment); the robot mass is read back from it. When ``integrals`` is given
    it is advanced in place with trapezoidal steps.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    grav_force, grav_moment = grav
    g = float(gravity)
    mass = -float(grav_force[2]) / g
    g_vec = np.array([0.0, 0.0, -g])

    e_r = target.r_d - state.r_b
    e_v = target.v_d - state.v_b
    e_q = so3.orientation_error(target.q_d, state.q_b)
    e_w = target.omega_d - state.omega

    integ = integrals if integrals is not None else PidIntegrals()
    prev_r = integ.last_e_r if integ.last_e_r is not None else e_r
    prev_q = integ.last_e_q if integ.last_e_q is not None else e_q
    force_limit = gains.force_clamp_ratio * (mass + payload.m_hat) * g
    integ.force = _clamped_integral(integ.force, prev_r, e_r, dt, gains.Ki_f, force_limit)
    if not hold_torque_integral:
        integ.torque = _clamped_integral(integ.torque, prev_q, e_q, dt, gains.Ki_t, gains.torque_clamp)
    integ.last_e_r = e_r
    integ.last_e_q = e_q

    F_b = (
        gains.Kp_f @ e_r
        + gains.Ki_f @ integ.force
        + gains.Kd_f @ e_v
        + mass * target.a_d
        - grav_force
        - payload.m_hat * g_vec
    )
    T_b = gains.Kp_t @ e_q + gains.Ki_t @ integ.torque + gains.Kd_t @ e_w - grav_moment - payload.tau_hat
    return BodyWrench(F_b, T_b)


class WrenchController:
    """Owns the PID integral state for one control loop."""

    def __init__(self, model: rm.RobotModel, gains: GainSet):
        self.model = model
        self.gains = gains
        self.integrals = PidIntegrals()

    def reset(self):
        self.integrals = PidIntegrals()

    def compute(self, target, state, payload, dt, hold_torque_integral=False) -> BodyWrench:
        grav = rm.gravity_feedforward(self.model, state)
        return compute_body_wrench(
            target, state, self.gains, grav, payload, dt,
            integrals=self.integrals, gravity=self.model.gravity,
            hold_torque_integral=hold_torque_integral,
        )

    def identification_wrench(self, target, state, payload, u_moment, dt) -> BodyWrench:
        """Identification-phase wrench.

        Force part as in ``compute``. Torque part is the PD orientation terms
        plus the adaptive moment command ``u_moment`` (which already carries the
        gravity and payload compensation); the torque integral is held.
        """
        wrench = self.compute(target, state, payload, dt, hold_torque_integral=True)
        e_q = self.integrals.last_e_q
        T_b = self.gains.Kp_t @ e_q + self.gains.Kd_t @ (target.omega_d - state.omega) + u_moment
        return BodyWrench(wrench.F_b, T_b)


@dataclass
class DistributionProblem:
    qp: QpProblem
    stance: list[int]
    A: np.ndarray
    B: np.ndarray
    n_friction_rows: int
    n_torque_rows: int


def _friction_rows(mu: float) -> np.ndarray:
    return np.array(
        [
            [1.0, 0.0, -mu],
            [-1.0, 0.0, -mu],
            [0.0, 1.0, -mu],
            [0.0, -1.0, -mu],
            [0.0, 0.0, -1.0],
        ]
    )


def assemble_distribution(
    wrench: BodyWrench,
    contact: rm.ContactState,
    model: rm.RobotModel,
    gains: GainSet,
    state: rm.RobotState,
    torque_rows: bool = True,
) -> DistributionProblem:
    """Weighted least-squares wrench matching over the stance feet only.

    Objective ``(AF - B)' Q (AF - B) + F' R F`` expanded to ``1/2 F'HF + f'F``
    with ``H = 2(A'QA + R)`` and ``f = -2 A'QB``. Constraints per stance foot:
    friction pyramid, unilateral contact and joint effort bounds on ``J^T R^T F``.
    """
    stance = contact.stance_legs
    if not stance:
        raise NoStanceFeet("force distribution needs at least one stance foot")
    n = 3 * len(stance)
    Rw = state.rotation
    A = np.zeros((6, n))
    for k, leg in enumerate(stance):
        arm = Rw @ contact.foot_pos_body[leg]
        A[0:3, 3 * k:3 * k + 3] = np.eye(3)
        A[3:6, 3 * k:3 * k + 3] = so3.skew(arm)
    B = wrench.vector
    Q = gains.Q
    H = 2.0 * (A.T @ Q @ A + gains.R(n))
    f = -2.0 * A.T @ Q @ B

    fr = _friction_rows(model.friction)
    rows = []
    rhs = []
    for k in range(len(stance)):
        block = np.zeros((5, n))
        block[:, 3 * k:3 * k + 3] = fr
        rows.append(block)
        rhs.append(np.zeros(5))
    n_torque = 0
    if torque_rows:
        joint_q = np.asarray(state.joint_q).reshape(4, 3)
        for k, leg in enumerate(stance):
            G = rm.foot_jacobian(model, joint_q[leg]).T @ Rw.T
            block = np.zeros((6, n))
            block[0:3, 3 * k:3 * k + 3] = G
            block[3:6, 3 * k:3 * k + 3] = -G
            rows.append(block)
            rhs.append(np.concatenate([model.tau_max, -model.tau_min]))
            n_torque += 6
    qp = QpProblem(H, f, np.vstack(rows), np.concatenate(rhs))
    return DistributionProblem(qp, stance, A, B, 5 * len(stance), n_torque)


def forces_from_solution(problem: DistributionProblem, sol: QpSolution) -> np.ndarray:
    forces = np.zeros((4, 3))
    for k, leg in enumerate(problem.stance):
        forces[leg] = sol.x[3 * k:3 * k + 3]
    return forces


def distribute_contact_forces(problem: DistributionProblem, solver: QpSolver | None = None):
    """Solve the distribution QP; returns ``(forces (4, 3), solution)``. Swing legs get zero."""
    solver = solver or QpSolver()
    sol = solver.solve(problem.qp)
    return forces_from_solution(problem, sol), sol


def distribute_with_fallback(wrench, contact, model, gains, state, solver=None):
    """Distribution with the infeasibility ladder.

    On a non-optimal solve: drop the joint effort rows, then halve the torque
    part of the wrench and try once more. Returns ``(forces, solution, problem, stage)``;
    stage is 0 (nominal), 1 (no effort rows) or 2 (halved torque).
    """
    solver = solver or QpSolver()
    problem = assemble_distribution(wrench, contact, model, gains, state)
    forces, sol = distribute_contact_forces(problem, solver)
    if sol.status is QpStatus.OPTIMAL:
        return forces, sol, problem, 0
    log.warning("distribution QP %s; retrying without joint effort rows", sol.status.value)
    problem = assemble_distribution(wrench, contact, model, gains, state, torque_rows=False)
    forces, sol = distribute_contact_forces(problem, solver)
    if sol.status is QpStatus.OPTIMAL:
        return forces, sol, problem, 1
    log.warning("distribution QP still %s; halving the torque demand", sol.status.value)
    halved = BodyWrench(wrench.F_b, 0.5 * wrench.T_b)
    problem = assemble_distribution(halved, contact, model, gains, state, torque_rows=False)
    forces, sol = distribute_contact_forces(problem, solver)
    return forces, sol, problem, 2


def joint_torques_from_forces(model, state, contact, forces) -> np.ndarray:
    return rm.torques_from_forces(model, state.q_b, state.joint_q, contact.stance, forces)
