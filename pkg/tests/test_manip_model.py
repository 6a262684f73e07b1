import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forcerl import manip_model as mm


def two_link_point_masses(gravity=9.81):
    # point masses of 1 kg at the link tips
    return mm.planar_arm([1.0, 1.0], [1.0, 1.0], com=[1.0, 1.0], inertia=[0.0, 0.0], gravity=gravity)


def fd_jacobian(model, q, h=1e-6):
    cols = []
    for i in range(model.n_joints):
        d = np.zeros(model.n_joints)
        d[i] = h
        p1, p0 = model.forward_kinematics(q + d), model.forward_kinematics(q - d)
        cols.append(np.r_[(p1.position - p0.position) / (2 * h), (p1.orientation - p0.orientation) / (2 * h)])
    return np.array(cols).T


def test_fk_one_link_axis_aligned():
    model = mm.planar_arm([1.0], [1.0])
    pose = mm.forward_kinematics(model, [0.0])
    np.testing.assert_allclose(pose.position, [1.0, 0.0], atol=1e-15)
    assert pose.orientation == 0.0


def test_fk_two_link_cases():
    model = mm.planar_arm([1.0, 1.0], [1.0, 1.0])
    np.testing.assert_allclose(mm.forward_kinematics(model, [np.pi / 2, 0]).position, [0, 2], atol=1e-12)
    # sum of link vectors
    q = [np.pi / 4, np.pi / 4]
    expect = [np.cos(np.pi / 4) + np.cos(np.pi / 2), np.sin(np.pi / 4) + np.sin(np.pi / 2)]
    np.testing.assert_allclose(mm.forward_kinematics(model, q).position, expect, atol=1e-12)
    np.testing.assert_allclose(expect, [0.7071, 1.7071], atol=1e-4)


def test_dimension_mismatch_rejected():
    model = mm.default_planar3()
    with pytest.raises(mm.DimensionError):
        mm.forward_kinematics(model, [0.0, 0.0])
    with pytest.raises(mm.DimensionError):
        mm.jacobian(model, np.zeros(4))


def test_jacobian_one_link():
    J = mm.jacobian(mm.planar_arm([1.0], [1.0]), [0.0])
    np.testing.assert_allclose(J[[0, 1, 5], 0], [0.0, 1.0, 1.0], atol=1e-15)
    assert not np.any(J[[2, 3, 4]])


def test_jacobian_times_zero_is_zero():
    model = mm.default_planar3()
    J = mm.jacobian(model, [0.3, -0.7, 1.1])
    assert not np.any(J @ np.zeros(3))


def test_jacobian_matches_finite_differences_random_configs():
    rng = np.random.default_rng(0)
    for model in (mm.planar_arm([1.0, 1.0], [1.0, 1.0]), mm.default_planar3()):
        for _ in range(100):
            q = rng.uniform(-np.pi, np.pi, model.n_joints)
            J = model.jacobian(q)[mm.PLANAR_ROWS]
            fd = fd_jacobian(model, q)
            assert np.max(np.abs(J - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_spatial_jacobian_matches_finite_differences():
    model = mm.default_spatial6()
    rng = np.random.default_rng(1)
    q = rng.uniform(-1, 1, 6)
    J = model.jacobian(q)
    h = 1e-6
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        dp = (model.forward_kinematics(q + d).position - model.forward_kinematics(q - d).position) / (2 * h)
        np.testing.assert_allclose(J[:3, i], dp, atol=1e-6)


def test_two_link_gravity_vector():
    # standard two-link formula with tip point masses: g1 = (m1 + m2) g l1 + m2 g l2, g2 = m2 g l2
    _, c, g = mm.dynamics_terms(two_link_point_masses(), mm.JointState.at_rest([0.0, 0.0]))
    np.testing.assert_allclose(g, [29.43, 9.81], atol=1e-12)
    assert not np.any(c)


def test_zero_gravity_gives_zero_gravity_vector():
    model = two_link_point_masses(gravity=0.0)
    rng = np.random.default_rng(2)
    for _ in range(10):
        _, _, g = mm.dynamics_terms(model, mm.JointState.at_rest(rng.uniform(-3, 3, 2)))
        assert not np.any(g)


def test_gravity_is_potential_gradient():
    model = mm.default_planar3()
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        _, _, g = model.dynamics_terms(q, np.zeros(3))
        fd = np.array([(model.potential_energy(q + h * e) - model.potential_energy(q - h * e)) / (2 * h)
                       for e in np.eye(3)])
        assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_mass_matrix_symmetric_positive_definite():
    rng = np.random.default_rng(4)
    for model in (mm.default_planar3(), mm.default_spatial6()):
        for _ in range(1000 if model.embedding == "planar" else 100):
            q = rng.uniform(-np.pi, np.pi, model.n_joints)
            M, _, _ = model.dynamics_terms(q, np.zeros(model.n_joints))
            assert np.max(np.abs(M - M.T)) <= 1e-10
            assert np.linalg.eigvalsh(M).min() > 0


def test_coriolis_matches_lagrangian_derivative():
    # c = Mdot qd - dT/dq, with both terms by central differences of M
    model = mm.default_planar3()
    rng = np.random.default_rng(5)
    h = 1e-6
    q, qd = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    M = lambda z: model.dynamics_terms(z, np.zeros(3))[0]
    Mdot = (M(q + h * qd) - M(q - h * qd)) / (2 * h)
    dT = np.array([0.5 * qd @ ((M(q + h * e) - M(q - h * e)) / (2 * h)) @ qd for e in np.eye(3)])
    _, c, _ = model.dynamics_terms(q, qd)
    np.testing.assert_allclose(c, Mdot @ qd - dT, atol=1e-6)


def test_gravity_compensation_equilibrium():
    model = mm.default_planar3()
    q = np.array([0.2, -1.1, 0.3])
    _, _, g = model.dynamics_terms(q, np.zeros(3))
    s = mm.forward_simulate(model, mm.JointState.at_rest(q), g, dt=0.05)
    assert np.max(np.abs(s.q - q)) <= 1e-9
    assert np.max(np.abs(s.qdot)) <= 1e-9


def test_zero_gravity_zero_torque_at_rest_is_unchanged():
    model = two_link_point_masses(gravity=0.0)
    s0 = mm.JointState.at_rest([0.4, -0.2])
    s1 = mm.forward_simulate(model, s0, np.zeros(2), dt=0.05)
    np.testing.assert_array_equal(s1.q, s0.q)
    np.testing.assert_array_equal(s1.qdot, s0.qdot)


def test_work_energy_one_link():
    # n semi-implicit Euler substeps from rest give KE / work = n / (n + 1) under
    # constant torque, so the 1% bound needs at least 100 substeps per tick
    model = mm.planar_arm([1.0], [1.0], gravity=0.0)
    s0 = mm.JointState.at_rest([0.0])
    tau = 0.5
    s1 = mm.forward_simulate(model, s0, np.array([tau]), dt=0.05, substep=0.00025)
    gain = mm.total_energy(model, s1) - mm.total_energy(model, s0)
    work = tau * (s1.q[0] - s0.q[0])
    assert abs(gain - work) <= 0.01 * abs(work)


def test_passivity_without_gravity_or_torque():
    # at the 1 ms substep the contact simulation uses
    model = mm.planar_arm([0.4, 0.35, 0.15], [2.0, 1.5, 0.5], gravity=0.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        s = mm.JointState(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
        e0 = mm.total_energy(model, s)
        peak = e0
        for _ in range(1000):
            s = mm.forward_simulate(model, s, np.zeros(3), dt=0.001, substep=0.001)
            peak = max(peak, mm.total_energy(model, s))
        assert peak <= e0 * 1.001


def test_torques_are_clamped():
    model = mm.planar_arm([1.0], [1.0], gravity=0.0, torque_limit=1.0)
    a = mm.forward_simulate(model, mm.JointState.at_rest([0.0]), np.array([100.0]), dt=0.01)
    b = mm.forward_simulate(model, mm.JointState.at_rest([0.0]), np.array([1.0]), dt=0.01)
    np.testing.assert_array_equal(a.q, b.q)


def test_non_finite_torque_rejected():
    model = mm.default_planar3()
    with pytest.raises(ValueError):
        mm.forward_simulate(model, mm.JointState.at_rest(np.zeros(3)), np.array([np.nan, 0, 0]))


def test_simulation_is_bit_deterministic():
    model = mm.default_planar3()
    s = mm.JointState([0.1, -0.9, 0.2], [0.3, 0.1, -0.2])
    a = mm.forward_simulate(model, s, np.array([1.0, 2.0, 0.1]), dt=0.05)
    b = mm.forward_simulate(model, s, np.array([1.0, 2.0, 0.1]), dt=0.05)
    assert a.q.tobytes() == b.q.tobytes() and a.qdot.tobytes() == b.qdot.tobytes()


def test_ik_fixed_point_and_stretched():
    model = mm.default_planar3()
    q0 = np.array([0.3, -0.8, 0.5])
    np.testing.assert_array_equal(mm.inverse_kinematics(model, model.forward_kinematics(q0), q0), q0)
    two = mm.planar_arm([1.0, 1.0], [1.0, 1.0])
    q = mm.inverse_kinematics(two, mm.EePose(np.array([2.0, 0.0]), 0.0), np.array([0.1, -0.1]))
    np.testing.assert_allclose(q, [0.0, 0.0], atol=1e-4)


def test_ik_unreachable():
    model = mm.default_planar3()
    with pytest.raises(mm.Unreachable):
        mm.inverse_kinematics(model, mm.EePose(np.array([5.0, 0.0]), 0.0), np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.2, 1.2), min_size=3, max_size=3))
def test_ik_round_trip(q_true):
    model = mm.default_planar3()
    q_true = np.array(q_true)
    target = model.forward_kinematics(q_true)
    q = mm.inverse_kinematics(model, target, q_true + 0.05)
    np.testing.assert_allclose(model.forward_kinematics(q).position, target.position, atol=1e-5)
