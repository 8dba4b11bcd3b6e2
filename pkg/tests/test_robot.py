import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from acql import robot as rm
from acql import so3
from acql.errors import JointOutOfRange, NoStanceFeet, SingularConfiguration, Unreachable

MODEL = rm.load_robot()
LO, HI = MODEL.knee_travel

leg_q = st.tuples(
    st.floats(-1.2, 1.2), st.floats(-1.2, 1.2), st.floats(LO, HI)
).map(np.array)
small_rotvec = st.tuples(*[st.floats(-0.6, 0.6)] * 3).map(np.array)


def stand_joints(ext=0.41):
    return np.tile([0.0, 0.0, ext], 4)


def all_stance(model=MODEL, q_b=None, joint_q=None):
    q_b = so3.quat_identity() if q_b is None else q_b
    joint_q = stand_joints() if joint_q is None else joint_q
    feet_body = rm.forward_kinematics(model, joint_q)
    return rm.ContactState(np.ones(4, dtype=bool), feet_body, rm.stance_anchors(model, joint_q, q_b, [1, 1, 1, 1]))


# model ------------------------------------------------------------------------

def test_model_invariants():
    assert MODEL.total_mass == pytest.approx(50.0, abs=1e-12)
    assert abs(MODEL.total_mass - sum(MODEL.link_masses)) <= 1e-12
    assert np.allclose(MODEL.torso_inertia, MODEL.torso_inertia.T)
    assert np.all(np.linalg.eigvalsh(MODEL.torso_inertia) > 0)
    assert MODEL.friction > 0 and np.all(MODEL.tau_min < MODEL.tau_max)
    assert 0.0 <= HI - LO <= 0.3 + 1e-12


def test_model_rejects_bad_values():
    base = dict(
        torso_inertia=np.eye(3), link_masses=[1.0], link_com_offsets=[[0, 0, 0]],
        hip_mount_points=MODEL.hip_mount_points,
    )
    rm.RobotModel(**base)
    with pytest.raises(ValueError):
        rm.RobotModel(**{**base, "torso_inertia": -np.eye(3)})
    with pytest.raises(ValueError):
        rm.RobotModel(**base, friction=0.0)
    with pytest.raises(ValueError):
        rm.RobotModel(**base, knee_travel=(0.1, 0.5))
    with pytest.raises(ValueError):
        rm.RobotModel(**base, tau_min=[1, 1, 1], tau_max=[0, 0, 0])


def test_model_is_read_only():
    with pytest.raises(ValueError):
        MODEL.link_masses[0] = 1.0


# kinematics ---------------------------------------------------------------------

def test_fk_straight_leg():
    feet = rm.forward_kinematics(MODEL, stand_joints(0.41))
    assert np.allclose(feet, MODEL.hip_mount_points + [0, 0, -0.41], atol=1e-15)


def test_fk_pitched_leg():
    q = stand_joints()
    q[0:3] = [0.0, 0.1, 0.4]
    foot = rm.forward_kinematics(MODEL, q)[0] - MODEL.hip_mount_points[0]
    assert abs(abs(foot[0]) - 0.4 * math.sin(0.1)) <= 1e-15
    assert foot[1] == 0.0
    assert foot[2] == pytest.approx(-0.4 * math.cos(0.1), abs=1e-15)


def test_fk_rejects_out_of_range():
    q = stand_joints()
    q[2] = HI + 0.01
    with pytest.raises(JointOutOfRange):
        rm.forward_kinematics(MODEL, q)


def test_fk_ik_round_trip_1000(rng):
    worst = 0.0
    for _ in range(1000):
        leg = int(rng.integers(4))
        q3 = np.array([rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(LO, HI)])
        q = stand_joints()
        q[3 * leg:3 * leg + 3] = q3
        target = rm.forward_kinematics(MODEL, q)[leg]
        back = rm.inverse_kinematics(MODEL, target, leg)
        q[3 * leg:3 * leg + 3] = back
        worst = max(worst, np.max(np.abs(rm.forward_kinematics(MODEL, q)[leg] - target)))
    assert worst <= 1e-10


def test_ik_straight_leg():
    target = MODEL.hip_mount_points[1] + [0, 0, -0.41]
    assert np.allclose(rm.inverse_kinematics(MODEL, target, 1), [0, 0, 0.41], atol=1e-15)


def test_ik_unreachable():
    with pytest.raises(Unreachable):
        rm.inverse_kinematics(MODEL, MODEL.hip_mount_points[0] + [0, 0, -(HI + 0.05)], 0)
    with pytest.raises(Unreachable):
        rm.inverse_kinematics(MODEL, MODEL.hip_mount_points[0] + [0, 0, -(LO - 0.05)], 0)


# jacobian ---------------------------------------------------------------------

def _fd_jacobian(q3, h=1e-6):
    J = np.zeros((3, 3))
    for j in range(3):
        dq = np.zeros(3)
        dq[j] = h
        J[:, j] = (rm.leg_chain(q3 + dq) - rm.leg_chain(q3 - dq)) / (2 * h)
    return J


def test_jacobian_prismatic_column_is_leg_axis():
    J = rm.foot_jacobian(MODEL, [0.0, 0.0, 0.41])
    assert np.array_equal(J[:, 2], [0.0, 0.0, -1.0])


def test_jacobian_finite_differences_1000(rng):
    worst = 0.0
    for _ in range(1000):
        q3 = np.array([rng.uniform(-2.4, 2.4), rng.uniform(-3.0, 3.0), rng.uniform(LO, HI)])
        worst = max(worst, np.max(np.abs(rm.leg_jacobian(q3) - _fd_jacobian(q3))))
    assert worst <= 1e-6


@given(leg_q)
def test_jacobian_determinant(q3):
    assert abs(np.linalg.det(rm.leg_jacobian(q3))) == pytest.approx(q3[2] ** 2 * abs(math.cos(q3[1])), abs=1e-12)


def test_jacobian_singular_near_vertical_pitch():
    dets = [abs(np.linalg.det(rm.leg_jacobian([0.0, math.pi / 2 - eps, 0.25]))) for eps in (1e-1, 1e-3, 1e-6)]
    assert dets[0] > dets[1] > dets[2]
    assert abs(np.linalg.det(rm.leg_jacobian([0.0, math.pi / 2, 0.0]))) < 1e-15
    with pytest.raises(SingularConfiguration):
        rm.foot_jacobian(MODEL, [0.0, math.pi / 2, 0.3])


# statics ----------------------------------------------------------------------

def test_forces_from_known_torques(rng):
    for _ in range(200):
        q_b = so3.quat_from_rotvec(rng.uniform(-0.3, 0.3, 3))
        joint_q = np.concatenate([[rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(LO, HI)]
                                  for _ in range(4)])
        F = rng.uniform(-100, 300, (4, 3))
        tau = rm.torques_from_forces(MODEL, q_b, joint_q, [True] * 4, F)
        state = rm.RobotState(np.zeros(3), np.zeros(3), q_b, np.zeros(3), joint_q=joint_q, joint_tau=tau)
        back = rm.contact_forces_from_torques(MODEL, state, all_stance(q_b=q_b, joint_q=joint_q))
        assert np.max(np.abs(back - F)) <= 1e-10 * max(1.0, np.abs(F).max())


def test_zero_torque_zero_force_and_swing_legs():
    state = rm.RobotState(np.zeros(3), np.zeros(3), so3.quat_identity(), np.zeros(3), joint_q=stand_joints())
    contact = all_stance()
    assert np.array_equal(rm.contact_forces_from_torques(MODEL, state, contact), np.zeros((4, 3)))
    state.joint_tau = np.ones(12)
    contact.stance = np.array([True, False, False, True])
    forces = rm.contact_forces_from_torques(MODEL, state, contact)
    assert np.array_equal(forces[[1, 2]], np.zeros((2, 3)))
    assert np.any(forces[0] != 0.0)


# gravity -----------------------------------------------------------------------

def test_gravity_single_mass_at_origin():
    m = rm.RobotModel(np.eye(3), [50.0], [[0, 0, 0]], MODEL.hip_mount_points)
    force, moment = rm.gravity_terms(m, so3.exp_rotation([0.1, 0.2, 0.3]))
    assert np.linalg.norm(force) == pytest.approx(490.5, abs=1e-12)
    assert force[2] < 0
    assert np.array_equal(moment, np.zeros(3))


@given(small_rotvec)
def test_gravity_moment_brute_force(w):
    R = so3.exp_rotation(w)
    g_vec = np.array([0, 0, -MODEL.gravity])
    brute = sum(so3.skew(R @ r) @ (m * g_vec) for m, r in zip(MODEL.link_masses, MODEL.link_com_offsets))
    _, moment = rm.gravity_terms(MODEL, R)
    assert np.max(np.abs(moment - brute)) <= 1e-12


@given(small_rotvec, small_rotvec)
def test_gravity_moment_frame_covariant(w, w2):
    # rotating the body and gravity together rotates the moment
    R, Q = so3.exp_rotation(w), so3.exp_rotation(w2)
    m = rm.RobotModel(MODEL.torso_inertia, MODEL.link_masses, MODEL.link_com_offsets, MODEL.hip_mount_points)
    g_vec = np.array([0, 0, -m.gravity])
    weighted = (m.link_masses[:, None] * m.link_com_offsets).sum(axis=0)
    rotated = so3.cross(Q @ R @ weighted, Q @ g_vec)
    _, moment = rm.gravity_terms(m, R)
    assert np.max(np.abs(Q @ moment - rotated)) <= 1e-12


# odometry ---------------------------------------------------------------------

def test_odometry_symmetric_stand():
    contact = all_stance()
    r, v = rm.body_odometry(MODEL, stand_joints(0.41), np.zeros(12), contact, so3.quat_identity())
    assert r == pytest.approx([0.0, 0.0, 0.41], abs=1e-15)
    assert np.array_equal(v, np.zeros(3))


def test_odometry_pitched_body():
    pitch = 0.05
    q_b = so3.quat_from_rotvec([0, pitch, 0])
    R = so3.quat_to_rot(q_b)
    r_true = np.array([0.0, 0.0, 0.41])
    ground = r_true + MODEL.hip_mount_points @ R.T
    ground[:, 2] = 0.0
    state = rm.RobotState(r_true, np.zeros(3), q_b, np.zeros(3))
    joint_q = np.concatenate([rm.inverse_kinematics(MODEL, R.T @ (ground[i] - r_true), i) for i in range(4)])
    contact = rm.ContactState(np.ones(4, dtype=bool), rm.forward_kinematics(MODEL, joint_q), ground)
    r, _ = rm.body_odometry(MODEL, joint_q, np.zeros(12), contact, state.q_b)
    # hand computation for the front-left chain: foot below the hip, hip raised by the pitch
    hip_z = r_true[2] - 0.35 * math.sin(pitch)
    chain = rm.leg_chain(joint_q[0:3])
    assert (R @ chain)[2] == pytest.approx(-hip_z, abs=1e-12)
    assert r == pytest.approx(r_true, abs=1e-12)


def test_odometry_needs_stance():
    contact = all_stance()
    contact.stance = np.zeros(4, dtype=bool)
    with pytest.raises(NoStanceFeet):
        rm.body_odometry(MODEL, stand_joints(), np.zeros(12), contact, so3.quat_identity())


def test_odometry_matches_simulator_truth():
    from acql import harness

    s = harness.load_scenario("stand_50kg")
    s.sim.duration = 0.5
    run = harness.run_scenario(s)
    r_true = run.vec("r_b")
    r_hat = run.vec("e_pos") + np.array([0.0, 0.0, s.height])
    assert np.max(np.abs(r_hat - r_true)) <= 1e-6


def test_acceleration_filter():
    f = rm.AccelerationFilter(0.01, window=2)
    assert np.array_equal(f.update([0, 0, 0]), np.zeros(3))
    assert f.update([0, 0, 0.1]) == pytest.approx([0, 0, 10.0])
    assert f.update([0, 0, 0.2]) == pytest.approx([0, 0, 10.0])
    assert f.update([0, 0, 0.2]) == pytest.approx([0, 0, 5.0])
