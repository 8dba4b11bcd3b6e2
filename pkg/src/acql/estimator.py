"""Online payload identification: analytic mass estimate and the invariant-manifold
update law for the payload gravity disturbance.

Rotational model used by the estimator (gyroscopic term dropped)::

    x1' = x2,   x2' = B u + d + k

with ``B = I^-1``, ``u`` the aggregate moment of the foot forces about the torso
origin, ``k = B sum(r_i x m_i g)`` and ``d = B (r_p x m_p g)`` the unknown.
All vectors are world frame. ``k`` is kept in acceleration units so that the
update and control laws below are dimensionally consistent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from acql import robot as rm
from acql import so3
from acql.errors import NotInStance


def _diag3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return float(v) * np.eye(3)
    if v.ndim == 1:
        return np.diag(v)
    return v


@dataclass
class EstimatorGains:
    c: np.ndarray = field(default_factory=lambda: 0.7 * np.eye(3))
    lam: np.ndarray = field(default_factory=lambda: 0.7 * np.eye(3))
    M_gain: np.ndarray = field(default_factory=lambda: 1.3 * np.eye(3))
    e_threshold: float = 0.01
    dt: float = 1e-3
    hold_time: float = 0.2
    mass_filter_tau: float = 0.02

    def __post_init__(self):
        for name in ("c", "lam", "M_gain"):
            value = _diag3(getattr(self, name))
            if np.any(np.diag(value) <= 0.0) or np.any(value != np.diag(np.diag(value))):
                raise ValueError(f"{name} must be diagonal with positive entries")
            setattr(self, name, value)
        if self.dt <= 0.0 or self.e_threshold <= 0.0:
            raise ValueError("dt and e_threshold must be positive")


@dataclass
class PayloadEstimate:
    """What the controller consumes: mass, disturbance and the moment ``I d_hat``."""

    m_hat: float = 0.0
    d_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    converged: bool = False


@dataclass
class EstimatorState:
    m_hat: float = 0.0
    m_hat_raw: float = 0.0
    d_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d_hat_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: np.ndarray = field(default_factory=lambda: np.zeros(3))
    z_diag: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))
    converged: bool = False


@dataclass
class DynamicsContext:
    B_dyn: np.ndarray
    k_vec: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x1d: np.ndarray
    x_tilde: np.ndarray


def make_context(model: rm.RobotModel, q_b, omega, q_d) -> DynamicsContext:
    """Build the estimator context from the measured attitude and rate.

    The tracking error is taken on the manifold, ``log(q_b q_d^-1)``, whose
    rate is the angular velocity for small errors.
    """
    B = model.inertia_inv
    _, link_moment = rm.gravity_terms(model, so3.quat_to_rot(q_b))
    return DynamicsContext(
        B_dyn=B,
        k_vec=B @ link_moment,
        x1=so3.log_rotation(so3.quat_to_rot(q_b)),
        x2=np.asarray(omega, dtype=float).copy(),
        x1d=so3.log_rotation(so3.quat_to_rot(q_d)),
        x_tilde=so3.orientation_error(q_b, q_d),
    )


def estimate_payload_mass(model: rm.RobotModel, contact_forces, a_b, stance=None) -> tuple[float, float]:
    """Payload mass from the vertical force balance; returns ``(clamped, raw)``.

    Raises:
        NotInStance: unless all four feet are in stance.
    """
    if stance is not None and not all(stance):
        raise NotInStance("payload mass is only identified in four-leg stance")
    g = model.gravity
    fz = float(np.sum(np.asarray(contact_forces, dtype=float).reshape(-1, 3)[:, 2]))
    raw = fz / g - model.total_mass - model.total_mass * float(a_b[2]) / g
    return max(raw, 0.0), raw


def tracking_error_s(ctx: DynamicsContext, gains: EstimatorGains) -> np.ndarray:
    return ctx.x2 + gains.lam @ ctx.x_tilde


def control_law_moment(ctx: DynamicsContext, est: EstimatorState, gains: EstimatorGains) -> np.ndarray:
    """u = -B^-1 (d_hat + k + c s + lam x2), an aggregate foot moment in N m."""
    s = tracking_error_s(ctx, gains)
    return -np.linalg.solve(ctx.B_dyn, est.d_hat + ctx.k_vec + gains.c @ s + gains.lam @ ctx.x2)


def beta_fn(x2, gains: EstimatorGains) -> np.ndarray:
    return gains.M_gain @ np.asarray(x2, dtype=float)


def update_law_rate(ctx: DynamicsContext, d_hat, u, gains: EstimatorGains) -> np.ndarray:
    return -gains.M_gain @ (ctx.B_dyn @ u + d_hat + beta_fn(ctx.x2, gains) + ctx.k_vec)


def update_law_step(ctx: DynamicsContext, est: EstimatorState, u, gains: EstimatorGains) -> EstimatorState:
    """Explicit Euler step of the disturbance estimate; ``u`` is the applied foot moment."""
    rate = update_law_rate(ctx, est.d_hat, u, gains)
    return replace(
        est,
        d_hat=est.d_hat + rate * gains.dt,
        d_hat_dot=rate,
        s=tracking_error_s(ctx, gains),
    )


def manifold_residual(d_hat, d_true, x2, gains: EstimatorGains) -> np.ndarray:
    """z = d_hat - d + beta(x2); only computable when the true d is known."""
    return np.asarray(d_hat) - np.asarray(d_true) + beta_fn(x2, gains)


def estimated_payload_moment(est, model: rm.RobotModel) -> np.ndarray:
    return model.torso_inertia @ est.d_hat


def orientation_within_threshold(ctx: DynamicsContext, gains: EstimatorGains) -> bool:
    return float(np.max(np.abs(ctx.x_tilde))) < gains.e_threshold


class ConvergenceMonitor:
    """Orientation error below threshold, sustained for ``hold_time``."""

    def __init__(self, gains: EstimatorGains):
        self.gains = gains
        self._below = 0
        self._needed = max(1, int(round(gains.hold_time / gains.dt)))

    def update(self, ctx: DynamicsContext) -> bool:
        if orientation_within_threshold(ctx, self.gains):
            self._below += 1
        else:
            self._below = 0
        return self._below >= self._needed


def convergence_check(ctx: DynamicsContext, gains: EstimatorGains, monitor: ConvergenceMonitor | None = None) -> bool:
    """Instantaneous check, or the sustained one when a monitor is supplied."""
    if monitor is None:
        return orientation_within_threshold(ctx, gains)
    return monitor.update(ctx)


def lyapunov_value(s) -> float:
    s = np.asarray(s, dtype=float)
    return 0.5 * float(s @ s)


class PayloadIdentifier:
    """Mass filter, disturbance update law and convergence flag for one loop.

    The disturbance estimate keeps refining while all four feet are down;
    ``freeze()`` holds it, as done before trotting.
    """

    def __init__(self, model: rm.RobotModel, gains: EstimatorGains):
        self.model = model
        self.gains = gains
        self.state = EstimatorState()
        self.monitor = ConvergenceMonitor(gains)
        self.frozen = False
        self._mass_seen = False

    def update_mass(self, contact_forces, a_b, stance) -> float:
        try:
            _, raw = estimate_payload_mass(self.model, contact_forces, a_b, stance)
        except NotInStance:
            return self.state.m_hat
        if self.frozen:
            return self.state.m_hat
        if not self._mass_seen:
            filtered = raw
            self._mass_seen = True
        else:
            alpha = 1.0 - math.exp(-self.gains.dt / self.gains.mass_filter_tau)
            filtered = self.state.m_hat_raw + alpha * (raw - self.state.m_hat_raw)
        # m_hat_raw carries the unclamped filter state
        self.state.m_hat_raw = filtered
        self.state.m_hat = max(filtered, 0.0)
        return self.state.m_hat

    def check_convergence(self, ctx: DynamicsContext) -> bool:
        flag = self.monitor.update(ctx)
        if flag:
            self.state.converged = True
        return self.state.converged

    def control(self, ctx: DynamicsContext) -> np.ndarray:
        return control_law_moment(ctx, self.state, self.gains)

    def update(self, ctx: DynamicsContext, u_applied, stance) -> None:
        if self.frozen or not all(stance):
            self.state.d_hat_dot = np.zeros(3)
            self.state.s = tracking_error_s(ctx, self.gains)
            return
        self.state = update_law_step(ctx, self.state, u_applied, self.gains)

    def freeze(self) -> None:
        self.frozen = True

    def payload(self) -> PayloadEstimate:
        return PayloadEstimate(
            m_hat=self.state.m_hat,
            d_hat=self.state.d_hat.copy(),
            tau_hat=estimated_payload_moment(self.state, self.model),
            converged=self.state.converged,
        )
