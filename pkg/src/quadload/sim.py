"""Planar 5-link quadruped dynamics with penalty ground contact.

The robot is a torso plus two 2-segment legs (front/rear pairs move
together), 7 DoF: q = [x, z, pitch, hip_f, knee_f, hip_r, knee_r].
Equations of motion are assembled by virtual work: every body contributes
m J^T J and I w w^T to the mass matrix, where J is its CoM Jacobian and w
the (constant) row mapping qdot to its angular rate.  Integration is
semi-implicit Euler at control_hz * substeps.

Ground contact is a spring-damper along the local surface normal plus an
anchored tangential spring whose force is capped by the Coulomb cone; the
anchor slides when the cap binds, so stick is exact and slip force equals
mu * N.  Anchors are part of the state, which keeps stepping a pure
function of (state, inputs).

Everything is vectorized over an environment batch; the scalar
RobotState/step API wraps a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DivergenceError
from .terrain import TerrainBatch, TerrainProfile

NQ = 7           # x, z, pitch, hip_f, knee_f, hip_r, knee_r
N_JOINTS = 4
N_BODIES = 5     # torso, thigh_f, calf_f, thigh_r, calf_r
N_FEET = 2

# rows map qdot -> absolute angular rate of [torso, thigh_f, calf_f, thigh_r, calf_r]
_A = np.array([
    [0, 0, 1, 0, 0, 0, 0],
    [0, 0, 1, 1, 0, 0, 0],
    [0, 0, 1, 1, 1, 0, 0],
    [0, 0, 1, 0, 0, 1, 0],
    [0, 0, 1, 0, 0, 1, 1],
], dtype=np.float64)
_AOUTER = np.einsum("bi,bj->bij", _A, _A)


@dataclass(frozen=True)
class RobotModel:
    """Nominal rigid-body parameters of the planar robot."""

    masses: tuple = (9.0, 2.0, 0.7, 2.0, 0.7)      # kg per body
    inertias: tuple = (0.15, 0.008, 0.003, 0.008, 0.003)  # kg m^2 about CoM
    thigh_len: float = 0.213
    calf_len: float = 0.213
    hip_x: float = 0.19         # hips at (+-hip_x, hip_z) in the base frame
    hip_z: float = 0.0
    # legs are mirrored (front knee forward, rear knee back) so a vertical
    # sag produces no net fore-aft force on the torso
    default_q: tuple = (0.785, -1.57, -0.785, 1.57)
    q_lower: tuple = (-0.8, -2.7, -2.4, 0.3)
    q_upper: tuple = (2.4, -0.3, 0.8, 2.7)
    tau_max: tuple = (45.0, 45.0, 45.0, 45.0)
    h_des: float = 0.30         # commanded base height above terrain
    plate_len: float = 0.8      # carrying plate, centred over the base
    plate_height: float = 0.05  # plate surface above the base origin
    corner_x: float = 0.19      # torso collision corners (+-corner_x, -corner_h)
    corner_h: float = 0.06

    def __post_init__(self):
        if len(self.masses) != N_BODIES or len(self.inertias) != N_BODIES:
            raise ContractViolation("need 5 body masses and inertias")
        if min(self.masses) <= 0 or min(self.inertias) <= 0:
            raise ContractViolation("masses and inertias must be positive")
        if self.thigh_len <= 0 or self.calf_len <= 0 or self.plate_len <= 0:
            raise ContractViolation("lengths must be positive")
        if self.plate_height <= 0:
            raise ContractViolation("plate must sit above the base origin")
        low, up = np.array(self.q_lower), np.array(self.q_upper)
        if np.any(low >= up):
            raise ContractViolation("joint limits must satisfy lower < upper")
        if not np.all(np.array(self.tau_max) > 0):
            raise ContractViolation("torque limits must be positive")

    @property
    def total_mass(self) -> float:
        return float(sum(self.masses))


@dataclass(frozen=True)
class SimConfig:
    control_hz: float = 50.0
    substeps: int = 4
    gravity: float = 9.81
    # explicit damping must respect c < 2 m_eff / dt for the lightest
    # contacting body (the calf tip, ~0.24 kg effective): keep kd well inside
    contact_kp: float = 8.0e3   # normal spring, N/m
    contact_kd: float = 40.0    # normal damper, N s/m
    contact_kt: float = 8.0e3   # tangential anchor spring
    contact_ktd: float = 40.0
    ground_friction: float = 0.8
    kp: float = 40.0            # joint PD
    kd: float = 1.0
    limit_stiffness: float = 100.0  # soft joint-stop spring, N m/rad
    divergence_bound: float = 1.0e4

    def __post_init__(self):
        if self.control_hz <= 0 or self.substeps < 1:
            raise ContractViolation("control_hz > 0 and substeps >= 1 required")

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_hz

    @property
    def substep_dt(self) -> float:
        return self.control_dt / self.substeps


@dataclass
class VecModel:
    """Per-environment model arrays (domain randomization lands here)."""

    masses: np.ndarray       # (N,5)
    inertias: np.ndarray     # (N,5)
    torso_com: np.ndarray    # (N,2) CoM offset of the torso in base frame
    leg_com: np.ndarray      # (N,2) CoM offset added to every leg link
    kp_scale: np.ndarray     # (N,)
    kd_scale: np.ndarray     # (N,)
    motor_scale: np.ndarray  # (N,)
    ground_mu: np.ndarray    # (N,)
    nominal: RobotModel = field(default_factory=RobotModel)

    @classmethod
    def from_model(cls, model: RobotModel, n: int,
                   ground_friction: float = 0.8) -> "VecModel":
        return cls(
            masses=np.tile(np.array(model.masses), (n, 1)),
            inertias=np.tile(np.array(model.inertias), (n, 1)),
            torso_com=np.zeros((n, 2)),
            leg_com=np.zeros((n, 2)),
            kp_scale=np.ones(n),
            kd_scale=np.ones(n),
            motor_scale=np.ones(n),
            ground_mu=np.full(n, ground_friction),
            nominal=model,
        )

    @property
    def n(self) -> int:
        return self.masses.shape[0]

    def total_mass(self) -> np.ndarray:
        return self.masses.sum(axis=1)


@dataclass
class VecState:
    q: np.ndarray        # (N,7)
    qd: np.ndarray       # (N,7)
    qdd: np.ndarray      # (N,7) from the latest substep
    tau: np.ndarray      # (N,4) applied joint torques, latest substep
    foot_f: np.ndarray   # (N,2,2) world contact force on each foot
    anchor: np.ndarray   # (N,2,2) tangential anchor points (world)

    @classmethod
    def zeros(cls, n: int) -> "VecState":
        return cls(q=np.zeros((n, NQ)), qd=np.zeros((n, NQ)),
                   qdd=np.zeros((n, NQ)), tau=np.zeros((n, N_JOINTS)),
                   foot_f=np.zeros((n, N_FEET, 2)), anchor=np.zeros((n, N_FEET, 2)))

    def copy(self) -> "VecState":
        return VecState(self.q.copy(), self.qd.copy(), self.qdd.copy(),
                        self.tau.copy(), self.foot_f.copy(), self.anchor.copy())


@dataclass(frozen=True)
class RobotState:
    """Single-robot state, the scalar face of VecState."""

    base_pos: tuple = (0.0, 0.30)
    base_pitch: float = 0.0
    base_lin_vel: tuple = (0.0, 0.0)
    base_ang_vel: float = 0.0
    q: tuple = (0.785, -1.57, 0.785, -1.57)
    qd: tuple = (0.0, 0.0, 0.0, 0.0)
    qdd: tuple = (0.0, 0.0, 0.0, 0.0)
    tau: tuple = (0.0, 0.0, 0.0, 0.0)
    foot_forces: tuple = ((0.0, 0.0), (0.0, 0.0))
    anchors: tuple = ((0.0, 0.0), (0.0, 0.0))

    def to_vec(self) -> VecState:
        vs = VecState.zeros(1)
        vs.q[0, :2] = self.base_pos
        vs.q[0, 2] = self.base_pitch
        vs.q[0, 3:] = self.q
        vs.qd[0, :2] = self.base_lin_vel
        vs.qd[0, 2] = self.base_ang_vel
        vs.qd[0, 3:] = self.qd
        vs.qdd[0, 3:] = self.qdd
        vs.tau[0] = self.tau
        vs.foot_f[0] = self.foot_forces
        vs.anchor[0] = self.anchors
        return vs

    @classmethod
    def from_vec(cls, vs: VecState, i: int = 0) -> "RobotState":
        return cls(
            base_pos=tuple(vs.q[i, :2]), base_pitch=float(vs.q[i, 2]),
            base_lin_vel=tuple(vs.qd[i, :2]), base_ang_vel=float(vs.qd[i, 2]),
            q=tuple(vs.q[i, 3:]), qd=tuple(vs.qd[i, 3:]),
            qdd=tuple(vs.qdd[i, 3:]), tau=tuple(vs.tau[i]),
            foot_forces=tuple(map(tuple, vs.foot_f[i])),
            anchors=tuple(map(tuple, vs.anchor[i])))


# --- kinematics ------------------------------------------------------------

def _rot(c: np.ndarray, s: np.ndarray, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    vx, vy = v[..., 0], v[..., 1]
    return np.stack([c * vx - s * vy, s * vx + c * vy], axis=-1)


def _angles(q: np.ndarray) -> np.ndarray:
    return q @ _A.T  # (N,5) absolute body angles


def _chain_tables(vm: VecModel):
    m = vm.nominal
    hip_f = np.array([m.hip_x, m.hip_z])
    hip_r = np.array([-m.hip_x, m.hip_z])
    thigh = np.array([0.0, -m.thigh_len])
    com_t = np.array([0.0, -m.thigh_len / 2]) + vm.leg_com
    com_c = np.array([0.0, -m.calf_len / 2]) + vm.leg_com
    bodies = [
        [(0, vm.torso_com)],
        [(0, hip_f), (1, com_t)],
        [(0, hip_f), (1, thigh), (2, com_c)],
        [(0, hip_r), (3, com_t)],
        [(0, hip_r), (3, thigh), (4, com_c)],
    ]
    foot = np.array([0.0, -m.calf_len])
    feet = [
        [(0, hip_f), (1, thigh), (2, foot)],
        [(0, hip_r), (3, thigh), (4, foot)],
    ]
    return bodies, feet


def _eval_chain(q, qd, cosp, sinp, phid, terms):
    """World pos/J/bias/vel of a point defined by base + sum of rotated vecs."""
    n = q.shape[0]
    pos = q[:, :2].copy()
    J = np.zeros((n, 2, NQ))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    bias = np.zeros((n, 2))
    for ai, v in terms:
        rv = _rot(cosp[:, ai], sinp[:, ai], v)
        pos += rv
        srv = np.stack([-rv[:, 1], rv[:, 0]], axis=-1)  # S R v
        J += srv[:, :, None] * _A[ai][None, None, :]
        bias -= (phid[:, ai] ** 2)[:, None] * rv
    vel = np.einsum("nij,nj->ni", J, qd)
    return pos, J, bias, vel


@dataclass
class Kin:
    body_pos: np.ndarray   # (N,5,2)
    body_J: np.ndarray     # (N,5,2,7)
    body_bias: np.ndarray  # (N,5,2)
    feet_pos: np.ndarray   # (N,2,2)
    feet_J: np.ndarray     # (N,2,2,7)
    feet_vel: np.ndarray   # (N,2,2)


def kinematics(vs: VecState, vm: VecModel) -> Kin:
    q, qd = vs.q, vs.qd
    phi = _angles(q)
    cosp, sinp = np.cos(phi), np.sin(phi)
    phid = qd @ _A.T
    bodies, feet = _chain_tables(vm)
    n = q.shape[0]
    body_pos = np.zeros((n, N_BODIES, 2))
    body_J = np.zeros((n, N_BODIES, 2, NQ))
    body_bias = np.zeros((n, N_BODIES, 2))
    for b, terms in enumerate(bodies):
        body_pos[:, b], body_J[:, b], body_bias[:, b], _ = \
            _eval_chain(q, qd, cosp, sinp, phid, terms)
    feet_pos = np.zeros((n, N_FEET, 2))
    feet_J = np.zeros((n, N_FEET, 2, NQ))
    feet_vel = np.zeros((n, N_FEET, 2))
    for f, terms in enumerate(feet):
        feet_pos[:, f], feet_J[:, f], _, feet_vel[:, f] = \
            _eval_chain(q, qd, cosp, sinp, phid, terms)
    return Kin(body_pos, body_J, body_bias, feet_pos, feet_J, feet_vel)


def foot_positions(vs: VecState, vm: VecModel) -> np.ndarray:
    return kinematics(vs, vm).feet_pos


def collision_points(vs: VecState, vm: VecModel) -> np.ndarray:
    """Knees and torso corners, (N,4,2) world — things that must stay clear."""
    m = vm.nominal
    q, qd = vs.q, vs.qd
    phi = _angles(q)
    cosp, sinp = np.cos(phi), np.sin(phi)
    phid = qd @ _A.T
    hip_f = np.array([m.hip_x, m.hip_z])
    hip_r = np.array([-m.hip_x, m.hip_z])
    thigh = np.array([0.0, -m.thigh_len])
    pts = [
        [(0, hip_f), (1, thigh)],                      # knee front
        [(0, hip_r), (3, thigh)],                      # knee rear
        [(0, np.array([m.corner_x, -m.corner_h]))],    # torso corners
        [(0, np.array([-m.corner_x, -m.corner_h]))],
    ]
    out = np.zeros((q.shape[0], len(pts), 2))
    for k, terms in enumerate(pts):
        out[:, k], _, _, _ = _eval_chain(q, qd, cosp, sinp, phid, terms)
    return out


@dataclass
class PlateKin:
    """Batch plate-frame kinematics for the load coupler."""

    pos: np.ndarray      # (N,2)
    vel: np.ndarray      # (N,2)
    acc: np.ndarray      # (N,2) uses the last substep's qdd (staggered coupling)
    angle: np.ndarray    # (N,)
    ang_vel: np.ndarray  # (N,)
    ang_acc: np.ndarray  # (N,)


def plate_kinematics(vs: VecState, vm: VecModel) -> PlateKin:
    m = vm.nominal
    q, qd = vs.q, vs.qd
    phi = _angles(q)
    cosp, sinp = np.cos(phi), np.sin(phi)
    phid = qd @ _A.T
    terms = [(0, np.array([0.0, m.plate_height]))]
    pos, J, bias, vel = _eval_chain(q, qd, cosp, sinp, phid, terms)
    acc = np.einsum("nij,nj->ni", J, vs.qdd) + bias
    return PlateKin(pos=pos, vel=vel, acc=acc, angle=q[:, 2].copy(),
                    ang_vel=qd[:, 2].copy(), ang_acc=vs.qdd[:, 2].copy())


# --- dynamics --------------------------------------------------------------

def pd_torques(q_des: np.ndarray, vs: VecState, vm: VecModel,
               cfg: SimConfig) -> np.ndarray:
    """Saturated PD torques toward q_des, with per-env gain/motor scales."""
    kp = cfg.kp * vm.kp_scale[:, None]
    kd = cfg.kd * vm.kd_scale[:, None]
    raw = kp * (q_des - vs.q[:, 3:]) - kd * vs.qd[:, 3:]
    tau_max = np.array(vm.nominal.tau_max)
    return np.clip(vm.motor_scale[:, None] * raw, -tau_max, tau_max)


def _contact_forces(vs: VecState, vm: VecModel, kin: Kin,
                    tb: TerrainBatch, cfg: SimConfig):
    """Penalty contact at the feet; mutates vs.anchor, returns (Q_c, forces)."""
    p = kin.feet_pos                    # (N,2,2)
    v = kin.feet_vel
    hx = p[:, :, 0]
    h = tb.heights(hx)
    slope = tb.slopes(hx)
    den = np.sqrt(1.0 + slope ** 2)
    n_hat = np.stack([-slope / den, 1.0 / den], axis=-1)   # (N,2,2)
    t_hat = np.stack([1.0 / den, slope / den], axis=-1)
    gap = (p[:, :, 1] - h) / den
    vn = np.einsum("nfi,nfi->nf", v, n_hat)
    vt = np.einsum("nfi,nfi->nf", v, t_hat)
    contact = gap < 0.0
    fn = np.where(contact,
                  np.maximum(0.0, -cfg.contact_kp * gap - cfg.contact_kd * vn),
                  0.0)
    stretch = np.einsum("nfi,nfi->nf", p - vs.anchor, t_hat)
    ft_raw = np.where(contact, -cfg.contact_kt * stretch - cfg.contact_ktd * vt, 0.0)
    cap = vm.ground_mu[:, None] * fn
    ft = np.clip(ft_raw, -cap, cap)
    slipped = contact & (np.abs(ft_raw) > cap)
    # anchors: free feet track the foot, slipping anchors yield to the cone cap
    new_stretch = -(ft + cfg.contact_ktd * vt) / cfg.contact_kt
    anchor_slip = p - new_stretch[:, :, None] * t_hat
    vs.anchor = np.where(slipped[:, :, None], anchor_slip,
                         np.where(contact[:, :, None], vs.anchor, p))
    forces = fn[:, :, None] * n_hat + ft[:, :, None] * t_hat
    q_c = np.einsum("nfij,nfi->nj", kin.feet_J, forces)
    return q_c, forces


def _limit_torques(q: np.ndarray, vm: VecModel, cfg: SimConfig) -> np.ndarray:
    low = np.array(vm.nominal.q_lower)
    up = np.array(vm.nominal.q_upper)
    qj = q[:, 3:]
    return (-cfg.limit_stiffness * np.maximum(0.0, qj - up)
            + cfg.limit_stiffness * np.maximum(0.0, low - qj))


def substep(vs: VecState, vm: VecModel, tb: TerrainBatch, tau: np.ndarray,
            ext_force: np.ndarray, ext_torque: np.ndarray,
            cfg: SimConfig, dt: float) -> np.ndarray:
    """One semi-implicit Euler substep in place; returns a divergence mask.

    ext_force (N,2) acts at the base origin, ext_torque (N,) about it.
    """
    kin = kinematics(vs, vm)
    m_mat = np.einsum("nb,nbij,nbik->njk", vm.masses, kin.body_J, kin.body_J)
    m_mat += np.einsum("nb,bjk->njk", vm.inertias, _AOUTER)

    g_vec = np.array([0.0, -cfg.gravity])
    q_rhs = np.einsum("nb,nbij,i->nj", vm.masses, kin.body_J, g_vec)
    q_rhs -= np.einsum("nb,nbij,nbi->nj", vm.masses, kin.body_J, kin.body_bias)
    q_c, forces = _contact_forces(vs, vm, kin, tb, cfg)
    q_rhs += q_c
    tau_eff = tau + _limit_torques(vs.q, vm, cfg)
    q_rhs[:, 3:] += tau_eff
    q_rhs[:, :2] += ext_force
    q_rhs[:, 2] += ext_torque

    qdd = np.linalg.solve(m_mat, q_rhs[:, :, None])[:, :, 0]
    vs.qd = vs.qd + qdd * dt
    vs.q = vs.q + vs.qd * dt
    vs.qdd = qdd
    vs.tau = np.asarray(tau).copy()
    vs.foot_f = forces

    bad = ~np.isfinite(vs.q).all(axis=1) | ~np.isfinite(vs.qd).all(axis=1)
    bad |= np.abs(vs.q).max(axis=1) > cfg.divergence_bound
    bad |= np.abs(vs.qd).max(axis=1) > cfg.divergence_bound
    return bad


def _init_anchors(vs: VecState, vm: VecModel) -> None:
    """All-zero anchors mean 'not yet stuck': park them at the feet."""
    unset = (vs.anchor == 0.0).all(axis=-1)
    if unset.any():
        feet = kinematics(vs, vm).feet_pos
        vs.anchor = np.where(unset[:, :, None], feet, vs.anchor)


def step(state: RobotState, tau: np.ndarray, terrain: TerrainProfile,
         wrench: tuple[np.ndarray, float], cfg: SimConfig,
         model: RobotModel | None = None) -> RobotState:
    """Advance one control period with constant joint torques.

    wrench is (force (2,), torque) applied at/about the base origin for the
    whole period.  Raises DivergenceError if the state leaves the
    configured bounds.
    """
    model = model or RobotModel()
    vm = VecModel.from_model(model, 1, ground_friction=cfg.ground_friction)
    vs = state.to_vec()
    _init_anchors(vs, vm)
    tb = TerrainBatch.from_profiles([terrain])
    tau = np.asarray(tau, dtype=np.float64).reshape(1, N_JOINTS)
    force = np.asarray(wrench[0], dtype=np.float64).reshape(1, 2)
    torque = np.array([float(wrench[1])])
    for k in range(cfg.substeps):
        bad = substep(vs, vm, tb, tau, force, torque, cfg, cfg.substep_dt)
        if bad[0]:
            raise DivergenceError("robot state out of bounds", step=k)
    return RobotState.from_vec(vs)


def step_pd(state: RobotState, q_des: np.ndarray, terrain: TerrainProfile,
            wrench: tuple[np.ndarray, float], cfg: SimConfig,
            model: RobotModel | None = None) -> RobotState:
    """Like step(), but recomputes saturated PD torques every substep."""
    model = model or RobotModel()
    vm = VecModel.from_model(model, 1, ground_friction=cfg.ground_friction)
    vs = state.to_vec()
    _init_anchors(vs, vm)
    tb = TerrainBatch.from_profiles([terrain])
    q_des = np.asarray(q_des, dtype=np.float64).reshape(1, N_JOINTS)
    force = np.asarray(wrench[0], dtype=np.float64).reshape(1, 2)
    torque = np.array([float(wrench[1])])
    for k in range(cfg.substeps):
        tau = pd_torques(q_des, vs, vm, cfg)
        bad = substep(vs, vm, tb, tau, force, torque, cfg, cfg.substep_dt)
        if bad[0]:
            raise DivergenceError("robot state out of bounds", step=k)
    return RobotState.from_vec(vs)


def reset_state(vm: VecModel, tb: TerrainBatch, rng: np.random.Generator,
                cfg: SimConfig, joint_noise: float = 0.05) -> VecState:
    """Default pose over the local terrain, feet pre-settled into the ground.

    The base height is chosen so the lower foot penetrates by the static
    two-foot share of the weight; this avoids a landing bounce on reset.
    """
    n = vm.n
    vs = VecState.zeros(n)
    vs.q[:, 3:] = np.array(vm.nominal.default_q) \
        + rng.uniform(-joint_noise, joint_noise, size=(n, N_JOINTS))
    vs.q[:, 1] = 1.0  # provisional height, corrected below
    kin = kinematics(vs, vm)
    rel_z = kin.feet_pos[:, :, 1] - vs.q[:, 1:2]
    hx = kin.feet_pos[:, :, 0]
    ground = tb.heights(hx)
    sag = vm.total_mass() * cfg.gravity / (N_FEET * cfg.contact_kp)
    vs.q[:, 1] = np.max(ground - rel_z, axis=1) - sag
    kin = kinematics(vs, vm)
    vs.anchor = kin.feet_pos.copy()
    return vs


def mechanical_energy(vs: VecState, vm: VecModel, cfg: SimConfig) -> np.ndarray:
    """Kinetic plus gravitational energy per environment (contact PE excluded)."""
    kin = kinematics(vs, vm)
    v_com = np.einsum("nbij,nj->nbi", kin.body_J, vs.qd)
    phid = vs.qd @ _A.T
    ke = 0.5 * np.einsum("nb,nbi,nbi->n", vm.masses, v_com, v_com)
    ke += 0.5 * np.einsum("nb,nb->n", vm.inertias, phid ** 2)
    pe = cfg.gravity * np.einsum("nb,nb->n", vm.masses, kin.body_pos[:, :, 1])
    return ke + pe
