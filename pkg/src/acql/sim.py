"""Ground-truth torso simulator, gait schedule and sensor pipeline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from acql import _kernels
from acql import robot as rm
from acql import so3
from acql.errors import NumericalBlowup

_MAX_POSITION = 1e2
_MAX_VELOCITY = 1e2
_MAX_RATE = 1e3


@dataclass
class SimConfig:
    dt: float = 1e-3
    duration: float = 5.0
    force_noise_rel: float = 0.0
    sensor_latency_ticks: int = 0
    integrator: str = "SemiImplicitEuler"
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0.0 or self.duration < 0.0:
            raise ValueError("dt must be positive and duration non-negative")
        if self.force_noise_rel < 0.0:
            raise ValueError("force noise must be non-negative")
        if self.sensor_latency_ticks < 0:
            raise ValueError("latency must be non-negative")
        if self.integrator != "SemiImplicitEuler":
            raise ValueError(f"unsupported integrator {self.integrator!r}")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class PayloadTruth:
    m_p: float = 0.0
    r_p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.r_p = np.asarray(self.r_p, dtype=float).reshape(3)
        if self.m_p < 0.0:
            raise ValueError("payload mass must be non-negative")

    def moment(self, R, gravity: float) -> np.ndarray:
        """World-frame gravity moment of the payload about the torso origin."""
        return so3.cross(np.asarray(R) @ self.r_p, np.array([0.0, 0.0, -self.m_p * gravity]))

    def disturbance(self, model: rm.RobotModel, R) -> np.ndarray:
        return model.inertia_inv @ self.moment(R, model.gravity)


def check_sane(state: rm.RobotState) -> None:
    parts = (state.r_b, state.v_b, state.q_b, state.omega)
    if not all(np.all(np.isfinite(p)) for p in parts):
        raise NumericalBlowup("non-finite simulator state")
    if (
        np.max(np.abs(state.r_b)) > _MAX_POSITION
        or np.max(np.abs(state.v_b)) > _MAX_VELOCITY
        or np.max(np.abs(state.omega)) > _MAX_RATE
    ):
        raise NumericalBlowup("simulator state left its sanity bounds")


def _principal_axes(inertia):
    """Diagonal inertia and the body-to-principal rotation (None when already diagonal)."""
    inertia = np.asarray(inertia, dtype=float)
    if np.count_nonzero(inertia - np.diag(np.diag(inertia))) == 0:
        return np.ascontiguousarray(inertia), None
    vals, P = np.linalg.eigh(inertia)
    if np.linalg.det(P) < 0.0:
        P[:, 0] = -P[:, 0]
    return np.ascontiguousarray(np.diag(vals)), P


def step_dynamics(model, payload: PayloadTruth, state: rm.RobotState, applied_forces, config: SimConfig,
                  contact: rm.ContactState) -> rm.RobotState:
    """Advance the torso (with payload rigidly attached) by one tick.

    ``contact.foot_pos_world`` holds the world contact points; only stance
    feet transmit force. The returned state carries the true acceleration in
    ``a_b``; joint fields are left for the sensor pipeline.
    """
    R = state.rotation
    _, link_moment = rm.gravity_terms(model, R)
    ext = link_moment + payload.moment(R, model.gravity)
    forces = np.ascontiguousarray(np.asarray(applied_forces, dtype=float).reshape(4, 3))
    stance = np.asarray(contact.stance, dtype=np.bool_)
    inertia, P = _principal_axes(model.torso_inertia)
    r, v, R_new, w, acc = _kernels.rigid_body_step(
        state.r_b.astype(float), state.v_b.astype(float), np.ascontiguousarray(R if P is None else R @ P),
        state.omega.astype(float), inertia,
        model.total_mass + payload.m_p, forces, np.ascontiguousarray(contact.foot_pos_world, dtype=float),
        stance, ext, config.dt, model.gravity,
    )
    if P is not None:
        R_new = np.asarray(R_new) @ P.T
    new = rm.RobotState(
        r_b=np.asarray(r), v_b=np.asarray(v), q_b=so3.quat_from_rot(np.asarray(R_new)),
        omega=np.asarray(w), a_b=np.asarray(acc),
        joint_q=state.joint_q.copy(), joint_qd=state.joint_qd.copy(), joint_tau=state.joint_tau.copy(),
    )
    check_sane(new)
    return new


def kinetic_energy(model, payload: PayloadTruth, state: rm.RobotState) -> float:
    I_w = state.rotation @ model.torso_inertia @ state.rotation.T
    m = model.total_mass + payload.m_p
    return 0.5 * m * float(state.v_b @ state.v_b) + 0.5 * float(state.omega @ I_w @ state.omega)


# gait ------------------------------------------------------------------------

@dataclass
class GaitSchedule:
    period: float = 0.5
    pairs: tuple = rm.DIAGONAL_PAIRS
    apex: float = 0.05
    start_time: float = 0.0

    def __post_init__(self):
        if self.period <= 0.0:
            raise ValueError("phase period must be positive")
        if self.apex < 0.0:
            raise ValueError("apex height must be non-negative")
        legs = sorted(leg for pair in self.pairs for leg in pair)
        if legs != [0, 1, 2, 3] or len(self.pairs) != 2:
            raise ValueError("pairs must split the four legs in two")
        for a, b in self.pairs:
            if tuple(sorted((a, b))) not in ((0, 3), (1, 2)):
                raise ValueError("stance pairs must be diagonal")


def min_jerk(tau: float) -> tuple[float, float]:
    """Quintic 0->1 blend with zero end velocity and acceleration; returns (s, ds/dtau)."""
    tau = min(max(tau, 0.0), 1.0)
    s = tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)
    ds = 30.0 * tau ** 2 * (1.0 - tau) ** 2
    return s, ds


def swing_height(phase: float, period: float, apex: float) -> tuple[float, float]:
    """Lift to apex over the first half of swing and place over the second half."""
    half = 0.5 * period
    if phase < half:
        s, ds = min_jerk(phase / half)
        return apex * s, apex * ds / half
    s, ds = min_jerk((phase - half) / half)
    return apex * (1.0 - s), -apex * ds / half


@dataclass
class GaitTargets:
    stance: np.ndarray
    foot_pos: np.ndarray
    foot_vel: np.ndarray


def trot_scheduler(t: float, schedule: GaitSchedule, footprints=None, touchdown=None) -> GaitTargets:
    """Stance flags and world foot targets for trotting in place.

    The first pair of ``schedule.pairs`` stands during even phases. Swing feet
    rise straight above their footprint; with ``touchdown`` given, the
    horizontal move to the touchdown point happens over the placement half
    with a quintic blend, so the foot still lands with zero velocity.
    """
    if t < 0.0:
        raise ValueError("time must be non-negative")
    footprints = np.zeros((4, 3)) if footprints is None else np.asarray(footprints, dtype=float)
    local = max(t - schedule.start_time, 0.0)
    k = int(math.floor(local / schedule.period + 1e-12))
    phase = local - k * schedule.period
    stance_pair = schedule.pairs[k % 2]
    stance = np.zeros(4, dtype=bool)
    stance[list(stance_pair)] = True
    pos = footprints.copy()
    vel = np.zeros((4, 3))
    z, dz = swing_height(phase, schedule.period, schedule.apex)
    half = 0.5 * schedule.period
    s_xy, ds_xy = (0.0, 0.0) if phase < half else min_jerk((phase - half) / half)
    for leg in range(4):
        if stance[leg]:
            continue
        pos[leg, 2] += z
        vel[leg, 2] = dz
        if touchdown is not None:
            delta = np.asarray(touchdown[leg], dtype=float)[:2] - footprints[leg, :2]
            pos[leg, :2] += s_xy * delta
            vel[leg, :2] = ds_xy / half * delta
    return GaitTargets(stance, pos, vel)


def phase_index(t: float, schedule: GaitSchedule) -> int:
    return int(math.floor(max(t - schedule.start_time, 0.0) / schedule.period + 1e-12))


def capture_point_touchdown(r_b, v_b, r_d, nominal_footprint, height: float, gravity: float,
                            support=None, lead_time: float = 0.0, gain: float = 0.0, accel=None) -> np.ndarray:
    """Touchdown point that keeps the nominal foot offset around the capture point.

    The capture point ``r + v / omega0`` is propagated ``lead_time`` ahead
    with the linear inverted pendulum across the current support line
    (``support`` holds its two foot points): only the component normal to the
    line diverges; the component along it drifts with the current velocity and
    acceleration ``accel``.
    """
    omega0 = math.sqrt(gravity / height)
    xi = np.asarray(r_b, dtype=float)[:2] + np.asarray(v_b, dtype=float)[:2] / omega0
    if support is not None and lead_time > 0.0:
        a = np.asarray(support[0], dtype=float)[:2]
        b = np.asarray(support[1], dtype=float)[:2]
        along = (b - a) / np.linalg.norm(b - a)
        normal = np.array([-along[1], along[0]])
        off = float((xi - a) @ normal)
        v_along = float(np.asarray(v_b, dtype=float)[:2] @ along)
        a_along = 0.0 if accel is None else float(np.asarray(accel, dtype=float)[:2] @ along)
        T = lead_time
        drift = v_along * T + a_along * (0.5 * T * T + T / omega0)
        xi = xi + normal * off * (math.exp(omega0 * T) - 1.0) + along * drift
    target = np.asarray(nominal_footprint, dtype=float).copy()
    target[:2] += (1.0 + gain) * (xi - np.asarray(r_d, dtype=float)[:2])
    return target


# sensors ---------------------------------------------------------------------

def joints_from_feet(model, state: rm.RobotState, foot_world, foot_vel_world=None):
    """Joint positions and rates that put each foot at its world point."""
    R = state.rotation
    foot_world = np.asarray(foot_world, dtype=float).reshape(4, 3)
    foot_vel_world = np.zeros((4, 3)) if foot_vel_world is None else np.asarray(foot_vel_world, dtype=float)
    q = np.zeros((4, 3))
    qd = np.zeros((4, 3))
    for leg in range(4):
        rel = foot_world[leg] - state.r_b
        p_body = R.T @ rel
        q[leg] = rm.inverse_kinematics(model, p_body, leg)
        vel_body = R.T @ (foot_vel_world[leg] - state.v_b - so3.cross(state.omega, rel))
        qd[leg] = np.linalg.solve(rm.foot_jacobian(model, q[leg]), vel_body)
    return q.reshape(12), qd.reshape(12)


class ForceSensor:
    """Measured contact forces: the applied forces with multiplicative Gaussian noise."""

    def __init__(self, rel_sigma: float, seed: int, latency_ticks: int = 0):
        self.rel_sigma = float(rel_sigma)
        self.rng = np.random.default_rng(seed)
        self.latency = int(latency_ticks)
        self._queue: list[np.ndarray] = []

    def measure(self, applied) -> np.ndarray:
        applied = np.asarray(applied, dtype=float).reshape(4, 3)
        self._queue.append(applied.copy())
        if len(self._queue) > self.latency + 1:
            self._queue.pop(0)
        out = self._queue[0].copy()
        if self.rel_sigma > 0.0:
            out = out * (1.0 + self.rel_sigma * self.rng.standard_normal(out.shape))
        return out


def applied_moment(contact: rm.ContactState, r_b, forces) -> np.ndarray:
    """Moment of the stance foot forces about the torso origin, world frame."""
    total = np.zeros(3)
    for leg in contact.stance_legs:
        total += so3.cross(contact.foot_pos_world[leg] - r_b, forces[leg])
    return total


# reduced plant ---------------------------------------------------------------

@dataclass
class ReducedPlant:
    """Rotational model the estimator is built on, integrated with explicit Euler:
    ``x1' = x2``, ``x2' = B u + d + k`` with constant ``B``, ``d`` and ``k``."""

    B: np.ndarray
    d: np.ndarray
    k: np.ndarray
    x1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x2: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def step(self, u, dt: float) -> None:
        acc = self.B @ u + self.d + self.k
        self.x1 = self.x1 + dt * self.x2
        self.x2 = self.x2 + dt * acc
