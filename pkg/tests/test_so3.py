import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from acql import so3
from acql.errors import AngleNearPi

finite = st.floats(-10.0, 10.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
unit = st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3).map(
    lambda v: np.array(v) / np.linalg.norm(v)
)


def rotvec(max_angle):
    return st.tuples(unit, st.floats(0.0, max_angle)).map(lambda p: p[0] * p[1])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# skew -----------------------------------------------------------------------

def test_skew_zero_and_unit_axis():
    assert np.array_equal(so3.skew([0, 0, 0]), np.zeros((3, 3)))
    assert np.array_equal(so3.skew([0, 0, 1]), np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], float))


@given(vec3, vec3)
def test_skew_matches_cross(v, u):
    expected = np.array([v[1] * u[2] - v[2] * u[1], v[2] * u[0] - v[0] * u[2], v[0] * u[1] - v[1] * u[0]])
    assert np.max(np.abs(so3.skew(v) @ u - expected)) <= 1e-14 * max(1.0, np.abs(v).max() * np.abs(u).max())
    assert np.allclose(so3.cross(v, u), expected, rtol=0, atol=1e-13)


@given(vec3)
def test_skew_antisymmetric_trace_zero(v):
    S = so3.skew(v)
    assert np.array_equal(S.T, -S)
    assert np.trace(S) == 0.0
    assert np.array_equal(so3.vee(S), v)


# exp / log --------------------------------------------------------------------

def test_exp_identity_and_quarter_yaw():
    assert np.array_equal(so3.exp_rotation([0, 0, 0]), np.eye(3))
    assert np.allclose(so3.exp_rotation([0, 0, math.pi / 2]), rot_z(math.pi / 2), atol=1e-15)


def test_exp_agrees_with_quaternion(rng):
    for _ in range(200):
        w = rng.standard_normal(3)
        assert np.allclose(so3.exp_rotation(w), so3.quat_to_rot(so3.quat_from_rotvec(w)), atol=1e-13)


def test_exp_small_angle_series():
    w = np.array([3e-9, -1e-9, 2e-9])
    assert np.allclose(so3.exp_rotation(w), np.eye(3) + so3.skew(w), atol=1e-16)


@given(rotvec(math.pi - 0.1))
def test_exp_is_rotation(w):
    R = so3.exp_rotation(w)
    assert np.max(np.abs(R @ R.T - np.eye(3))) <= 1e-9
    assert abs(np.linalg.det(R) - 1.0) <= 1e-9


def test_log_identity_and_quarter_yaw():
    assert np.array_equal(so3.log_rotation(np.eye(3)), np.zeros(3))
    assert np.allclose(so3.log_rotation(rot_z(math.pi / 2)), [0, 0, math.pi / 2], atol=1e-15)


def test_log_tiny_angle_uses_skew_branch():
    R = so3.exp_rotation([1e-10, 0.0, 0.0])
    assert np.max(np.abs(so3.log_rotation(R) - 0.5 * so3.vee(R - R.T))) <= 1e-15


def test_exp_log_round_trip_10k(rng):
    worst = 0.0
    for _ in range(10_000):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        R = so3.exp_rotation(axis * rng.uniform(0.0, math.pi - 0.1))
        worst = max(worst, np.max(np.abs(so3.exp_rotation(so3.log_rotation(R)) - R)))
    assert worst <= 1e-9


@given(rotvec(math.pi - 0.1))
def test_log_norm_is_quaternion_angle(w):
    q = so3.quat_from_rotvec(w)
    assert abs(np.linalg.norm(so3.log_rotation(so3.quat_to_rot(q))) - so3.quat_angle(q)) <= 1e-9


def test_log_near_pi_raises():
    with pytest.raises(AngleNearPi):
        so3.log_rotation(rot_z(math.pi))
    with pytest.raises(AngleNearPi):
        so3.log_rotation(rot_z(math.pi - 1e-4))
    so3.log_rotation(rot_z(math.pi - 0.1))


def _rot_with_d(d):
    # rotation about a fixed skew axis whose trace term equals d
    axis = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
    return so3.exp_rotation(axis * math.acos(d))


def test_log_branch_continuity():
    for gap in (1e-9 - 1e-12, 1e-9 + 1e-12, 1e-9):
        below = so3.log_rotation(_rot_with_d(1.0 - gap))
        above = so3.log_rotation(_rot_with_d(1.0 - (2e-9 - gap)))
        assert np.max(np.abs(below - above)) <= 1e-7


def test_orientation_error_branch_continuity():
    qa = so3.quat_identity()
    errs = []
    for gap in (1e-9 - 1e-12, 1e-9 + 1e-12):
        qd = so3.quat_from_rot(_rot_with_d(1.0 - gap))
        errs.append(so3.orientation_error(qd, qa))
    assert np.max(np.abs(errs[0] - errs[1])) <= 1e-7


# quaternions ------------------------------------------------------------------

@given(st.tuples(finite, finite, finite, finite).filter(lambda q: np.linalg.norm(q) > 1e-3))
def test_quat_normalize_canonical(q):
    n = so3.quat_normalize(np.array(q))
    assert abs(np.linalg.norm(n) - 1.0) <= 1e-9
    assert n[0] >= 0.0


@given(rotvec(math.pi - 0.1))
def test_quat_rot_round_trip(w):
    q = so3.quat_from_rotvec(w)
    assert np.allclose(so3.quat_from_rot(so3.quat_to_rot(q)), q, atol=1e-12)


def test_quat_from_ypr_matches_euler():
    q = so3.quat_from_ypr(0.3, -0.2, 0.1)
    Rz = so3.exp_rotation([0, 0, 0.3])
    Ry = so3.exp_rotation([0, -0.2, 0])
    Rx = so3.exp_rotation([0.1, 0, 0])
    assert np.allclose(so3.quat_to_rot(q), Rz @ Ry @ Rx, atol=1e-14)


def test_orientation_error_examples():
    qi = so3.quat_identity()
    assert np.array_equal(so3.orientation_error(qi, qi), np.zeros(3))
    qd = so3.quat_from_rotvec([0, 0, 0.2])
    assert np.allclose(so3.orientation_error(qd, qi), [0, 0, 0.2], atol=1e-15)


@given(rotvec(1.4), rotvec(1.4))
def test_orientation_error_antisymmetric(a, b):
    qa, qb = so3.quat_from_rotvec(a), so3.quat_from_rotvec(b)
    assert np.max(np.abs(so3.orientation_error(qa, qb) + so3.orientation_error(qb, qa))) <= 1e-12


def test_orientation_error_wraps_large_yaw():
    # 3.25 rad heading and its wrapped equivalent give the same error
    qd = so3.quat_from_ypr(3.25, -0.01, 0.0)
    qw = so3.quat_from_ypr(3.25 - 2 * math.pi, -0.01, 0.0)
    assert np.allclose(so3.orientation_error(qd, qw), 0.0, atol=1e-12)


# derivatives --------------------------------------------------------------------

def test_exp_time_derivative_finite_difference(rng):
    """d/dt exp(t w) at t = s equals skew(w) exp(s w)."""
    h = 1e-6
    for _ in range(1000):
        w = rng.standard_normal(3)
        s = rng.uniform(0.0, 1.0)
        fd = (so3.exp_rotation((s + h) * w) - so3.exp_rotation((s - h) * w)) / (2 * h)
        assert np.max(np.abs(fd - so3.skew(w) @ so3.exp_rotation(s * w))) <= 1e-6


def test_orientation_error_rate_is_angular_velocity(rng):
    """Rotating qa at world rate omega: d/dt orientation_error(qa, qd) -> omega near qa = qd."""
    h = 1e-6
    for _ in range(200):
        qd = so3.quat_from_rotvec(rng.uniform(-1, 1, 3))
        omega = rng.standard_normal(3)
        plus = so3.quat_mul(so3.quat_from_rotvec(omega * h), qd)
        minus = so3.quat_mul(so3.quat_from_rotvec(-omega * h), qd)
        fd = (so3.orientation_error(plus, qd) - so3.orientation_error(minus, qd)) / (2 * h)
        assert np.max(np.abs(fd - omega)) <= 1e-6
