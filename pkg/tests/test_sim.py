import numpy as np
import pytest

from quadload.errors import ContractViolation, DivergenceError
from quadload.sim import (
    N_JOINTS,
    NQ,
    RobotModel,
    RobotState,
    SimConfig,
    VecModel,
    VecState,
    collision_points,
    kinematics,
    mechanical_energy,
    pd_torques,
    plate_kinematics,
    reset_state,
    step,
    step_pd,
    substep,
)
from quadload.terrain import TerrainBatch, TerrainProfile

CFG = SimConfig()
MODEL = RobotModel()


def _vec(n=1, q=None, qd=None, model=MODEL):
    vm = VecModel.from_model(model, n)
    vs = VecState.zeros(n)
    vs.q[:, 3:] = model.default_q
    vs.q[:, 1] = 0.30
    if q is not None:
        vs.q[:] = q
    if qd is not None:
        vs.qd[:] = qd
    return vs, vm


def _plane():
    return TerrainBatch.from_profiles([TerrainProfile("plane")])


def test_model_validation():
    with pytest.raises(ContractViolation):
        RobotModel(masses=(9.0, 2.0, 0.7, 2.0, -0.7))
    with pytest.raises(ContractViolation):
        RobotModel(q_lower=(0.0, 0.0, 0.0, 0.0), q_upper=(0.0, 1.0, 1.0, 1.0))
    with pytest.raises(ContractViolation):
        SimConfig(substeps=0)


def test_pd_torque_values():
    # kp=20: 0.1 rad error -> 2 Nm; kd=0.5: 1 rad/s -> -0.5 Nm
    cfg = SimConfig(kp=20.0, kd=0.5)
    vs, vm = _vec()
    q_des = vs.q[:, 3:].copy()
    q_des[0, 0] += 0.1
    tau = pd_torques(q_des, vs, vm, cfg)
    assert tau[0, 0] == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(tau[0, 1:], 0.0)
    vs.qd[0, 4] = 1.0
    tau = pd_torques(vs.q[:, 3:], vs, vm, cfg)
    assert tau[0, 1] == pytest.approx(-0.5, abs=1e-12)


def test_pd_torque_saturates():
    vs, vm = _vec()
    q_des = vs.q[:, 3:] + 100.0
    tau = pd_torques(q_des, vs, vm, CFG)
    np.testing.assert_allclose(tau[0], MODEL.tau_max)


def test_mass_matrix_spd():
    rng = np.random.default_rng(0)
    for _ in range(10):
        q = rng.uniform(-1, 1, (1, NQ))
        vs, vm = _vec(q=q)
        kin = kinematics(vs, vm)
        m = np.einsum("nb,nbij,nbik->njk", vm.masses, kin.body_J, kin.body_J)
        from quadload.sim import _AOUTER
        m += np.einsum("nb,bjk->njk", vm.inertias, _AOUTER)
        np.testing.assert_allclose(m[0], m[0].T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(m[0]) > 0)


def test_foot_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    q0 = rng.uniform(-0.8, 0.8, NQ)
    vs, vm = _vec(q=q0[None])
    kin = kinematics(vs, vm)
    h = 1e-6
    for col in range(NQ):
        qp, qm = q0.copy(), q0.copy()
        qp[col] += h
        qm[col] -= h
        vsp, _ = _vec(q=qp[None])
        vsm, _ = _vec(q=qm[None])
        dp = (kinematics(vsp, vm).feet_pos - kinematics(vsm, vm).feet_pos) / (2 * h)
        np.testing.assert_allclose(kin.feet_J[0, :, :, col], dp[0], atol=1e-6)


def test_body_bias_accel_matches_finite_differences():
    # bias = dJ/dt qd: compare against FD of J along the flow q + eps*qd
    rng = np.random.default_rng(2)
    q0 = rng.uniform(-0.8, 0.8, NQ)
    qd0 = rng.uniform(-1, 1, NQ)
    vs, vm = _vec(q=q0[None], qd=qd0[None])
    kin = kinematics(vs, vm)
    h = 1e-6
    vsp, _ = _vec(q=(q0 + h * qd0)[None], qd=qd0[None])
    vsm, _ = _vec(q=(q0 - h * qd0)[None], qd=qd0[None])
    jdot = (kinematics(vsp, vm).body_J - kinematics(vsm, vm).body_J) / (2 * h)
    bias_fd = np.einsum("nbij,nj->nbi", jdot, vs.qd[None][0])
    np.testing.assert_allclose(kin.body_bias, bias_fd, atol=1e-5)


def test_zero_gravity_energy_conserved_within_one_percent():
    # free-floating swing, no contact, g=0: the integrator must not pump energy
    cfg = SimConfig(gravity=0.0)
    vs, vm = _vec()
    vs.q[0, 1] = 2.0
    vs.qd[0] = [0.1, 0.05, 0.3, 1.0, -0.8, 0.6, -1.2]
    tb = _plane()
    e0 = mechanical_energy(vs, vm, cfg)[0]
    tau = np.zeros((1, N_JOINTS))
    f = np.zeros((1, 2))
    t = np.zeros(1)
    for _ in range(200):
        substep(vs, vm, tb, tau, f, t, cfg, cfg.substep_dt)
    e1 = mechanical_energy(vs, vm, cfg)[0]
    assert abs(e1 - e0) / abs(e0) < 0.01
    assert e0 > 0.1  # the test is vacuous if the robot barely moves


def test_free_fall_com_acceleration():
    # airborne robot accelerates its CoM at -g regardless of pose
    vs, vm = _vec()
    vs.q[0, 1] = 5.0
    tb = _plane()
    tau = np.zeros((1, N_JOINTS))
    substep(vs, vm, tb, tau, np.zeros((1, 2)), np.zeros(1), CFG, CFG.substep_dt)
    kin = kinematics(vs, vm)
    acc_com = np.einsum("nb,nbij,nj->ni", vm.masses, kin.body_J, vs.qdd) \
        / vm.total_mass()[:, None]
    bias_com = np.einsum("nb,nbi->ni", vm.masses, kinematics(vs, vm).body_bias) \
        / vm.total_mass()[:, None]
    np.testing.assert_allclose(acc_com[0] + bias_com[0], [0.0, -9.81], atol=1e-9)


def test_reset_is_deterministic_and_feet_grounded():
    vm = VecModel.from_model(MODEL, 4)
    tb = TerrainBatch.from_profiles([TerrainProfile("plane")] * 4)
    vs1 = reset_state(vm, tb, np.random.default_rng(12), CFG)
    vs2 = reset_state(vm, tb, np.random.default_rng(12), CFG)
    np.testing.assert_array_equal(vs1.q, vs2.q)
    feet = kinematics(vs1, vm).feet_pos
    assert np.all(feet[:, :, 1] < 0.01)
    assert np.all(feet[:, :, 1] > -0.02)


def _settle(vs, vm, tb, cfg, seconds, q_des):
    tau = None
    f = np.zeros((vm.n, 2))
    t = np.zeros(vm.n)
    for _ in range(int(seconds * cfg.control_hz)):
        for _ in range(cfg.substeps):
            tau = pd_torques(q_des, vs, vm, cfg)
            substep(vs, vm, tb, tau, f, t, cfg, cfg.substep_dt)
    return vs


def test_static_equilibrium_height_holds():
    # PD hold at the default pose: after settling, base height varies < 1 mm/s
    cfg = SimConfig()
    vm = VecModel.from_model(MODEL, 1)
    tb = _plane()
    vs = reset_state(vm, tb, np.random.default_rng(0), cfg, joint_noise=0.0)
    q_des = np.tile(MODEL.default_q, (1, 1))
    _settle(vs, vm, tb, cfg, 2.0, q_des)
    h0 = vs.q[0, 1]
    heights = []
    f = np.zeros((1, 2))
    t = np.zeros(1)
    for _ in range(int(1.0 * cfg.control_hz * cfg.substeps)):
        tau = pd_torques(q_des, vs, vm, cfg)
        substep(vs, vm, tb, tau, f, t, cfg, cfg.substep_dt)
        heights.append(vs.q[0, 1])
    assert max(abs(h - h0) for h in heights) < 1e-3


def test_added_downward_force_raises_contact_sum():
    cfg = SimConfig()
    vm = VecModel.from_model(MODEL, 1)
    tb = _plane()
    vs = reset_state(vm, tb, np.random.default_rng(0), cfg, joint_noise=0.0)
    q_des = np.tile(MODEL.default_q, (1, 1))
    _settle(vs, vm, tb, cfg, 2.0, q_des)
    base = vs.foot_f[0, :, 1].sum()
    assert base == pytest.approx(MODEL.total_mass * cfg.gravity, rel=0.02)
    # push down with 68.7 N (a 7 kg load's weight) at the base
    f = np.array([[0.0, -68.7]])
    t = np.zeros(1)
    for _ in range(int(3.0 * cfg.control_hz * cfg.substeps)):
        tau = pd_torques(q_des, vs, vm, cfg)
        substep(vs, vm, tb, tau, f, t, cfg, cfg.substep_dt)
    loaded = vs.foot_f[0, :, 1].sum()
    assert loaded - base == pytest.approx(68.7, rel=0.05)


def test_contact_forces_respect_friction_cone():
    cfg = SimConfig()
    vm = VecModel.from_model(MODEL, 1)
    vm.ground_mu[:] = 0.3
    tb = _plane()
    vs = reset_state(vm, tb, np.random.default_rng(3), cfg, joint_noise=0.0)
    q_des = np.tile(MODEL.default_q, (1, 1))
    _settle(vs, vm, tb, cfg, 1.0, q_des)
    # shove sideways hard enough to make the feet slip
    f = np.array([[80.0, 0.0]])
    t = np.zeros(1)
    for _ in range(200):
        tau = pd_torques(q_des, vs, vm, cfg)
        substep(vs, vm, tb, tau, f, t, cfg, cfg.substep_dt)
        fn = vs.foot_f[0, :, 1]
        ft = vs.foot_f[0, :, 0]
        assert np.all(fn >= 0.0)
        assert np.all(np.abs(ft) <= 0.3 * fn + 1e-9)
    assert vs.qd[0, 0] > 0.05  # it actually slid


def test_substep_convergence_is_first_order_in_count():
    # halving the substep size halves the error over one control period,
    # i.e. the local truncation is second order
    rng = np.random.default_rng(4)
    q0 = np.zeros(NQ)
    q0[1] = 1.0
    q0[2] = 0.2
    q0[3:] = MODEL.default_q + rng.uniform(-0.3, 0.3, 4)
    qd0 = rng.uniform(-1, 1, NQ)
    tau = rng.uniform(-10, 10, (1, N_JOINTS))
    states = {}
    for n_sub in (4, 8, 16, 32):
        cfg = SimConfig(substeps=n_sub)
        vs, vm = _vec(q=q0[None], qd=qd0[None])
        tb = _plane()
        f = np.zeros((1, 2))
        t = np.zeros(1)
        for _ in range(n_sub):
            substep(vs, vm, tb, tau, f, t, cfg, cfg.substep_dt)
        states[n_sub] = np.concatenate([vs.q[0], vs.qd[0]])
    e1 = np.linalg.norm(states[4] - states[8])
    e2 = np.linalg.norm(states[8] - states[16])
    e3 = np.linalg.norm(states[16] - states[32])
    assert e1 / e2 == pytest.approx(2.0, rel=0.35)
    assert e2 / e3 == pytest.approx(2.0, rel=0.35)


def test_step_scalar_api_and_divergence():
    st0 = RobotState()
    terrain = TerrainProfile("plane")
    st1 = step(st0, np.zeros(4), terrain, (np.zeros(2), 0.0), CFG)
    assert isinstance(st1, RobotState)
    assert st1.base_pos[1] != st0.base_pos[1]
    with pytest.raises(DivergenceError):
        s = RobotState(base_lin_vel=(9.0e3, 0.0))
        step(s, np.zeros(4), terrain, (np.array([1e9, 0.0]), 0.0), CFG)


def test_step_pd_tracks_setpoint_in_zero_g():
    # without gravity torque the PD loop should converge almost exactly
    cfg = SimConfig(gravity=0.0)
    st = RobotState(base_pos=(0.0, 2.0))
    terrain = TerrainProfile("plane")
    q_des = np.array(MODEL.default_q) + np.array([0.1, -0.15, 0.1, 0.15])
    for _ in range(100):
        st = step_pd(st, q_des, terrain, (np.zeros(2), 0.0), cfg)
    np.testing.assert_allclose(st.q, q_des, atol=5e-3)


def test_step_pd_holds_stance_under_gravity():
    # gravity-loaded joints settle within the static PD error tau/kp
    cfg = SimConfig()
    vm = VecModel.from_model(MODEL, 1)
    tb = _plane()
    vs = reset_state(vm, tb, np.random.default_rng(0), cfg, joint_noise=0.0)
    st = RobotState.from_vec(vs)
    terrain = TerrainProfile("plane")
    q_des = np.array(MODEL.default_q)
    for _ in range(100):
        st = step_pd(st, q_des, terrain, (np.zeros(2), 0.0), cfg)
    # knees bear ~10.6 Nm -> ~0.27 rad of sag at kp=40, hips much less
    assert abs(st.q[1] - q_des[1]) < 0.35
    assert abs(st.q[0] - q_des[0]) < 0.15
    assert abs(st.base_pitch) < 0.02


def test_batched_substep_is_deterministic():
    vm = VecModel.from_model(MODEL, 8)
    tb = TerrainBatch.from_profiles(
        [TerrainProfile("rough", rough_amplitude=0.02, rough_corr_len=0.15, seed=i)
         for i in range(8)])
    rng = np.random.default_rng(7)
    vs_a = reset_state(vm, tb, np.random.default_rng(5), CFG)
    vs_b = vs_a.copy()
    tau = rng.uniform(-5, 5, (8, N_JOINTS))
    f = np.zeros((8, 2))
    t = np.zeros(8)
    for _ in range(40):
        substep(vs_a, vm, tb, tau, f, t, CFG, CFG.substep_dt)
    for _ in range(40):
        substep(vs_b, vm, tb, tau, f, t, CFG, CFG.substep_dt)
    np.testing.assert_array_equal(vs_a.q, vs_b.q)
    np.testing.assert_array_equal(vs_a.qd, vs_b.qd)
    np.testing.assert_array_equal(vs_a.foot_f, vs_b.foot_f)


def test_plate_sits_above_base_and_tracks_pitch():
    vs, vm = _vec()
    vs.q[0, 2] = 0.3
    pk = plate_kinematics(vs, vm)
    want = vs.q[0, :2] + 0.05 * np.array([-np.sin(0.3), np.cos(0.3)])
    np.testing.assert_allclose(pk.pos[0], want, atol=1e-12)
    assert pk.angle[0] == 0.3


def test_collision_points_shape_and_location():
    vs, vm = _vec()
    pts = collision_points(vs, vm)
    assert pts.shape == (1, 4, 2)
    # knees sit below the hips, corners below the base origin
    assert np.all(pts[0, :2, 1] < vs.q[0, 1])
    np.testing.assert_allclose(pts[0, 2:, 1], vs.q[0, 1] - MODEL.corner_h, atol=1e-12)
