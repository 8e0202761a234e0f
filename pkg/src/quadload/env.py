"""Vectorized training environment for loaded planar locomotion.

A batch of independent planar robots steps in lockstep at 50 Hz, each
carrying a box that slides on its back plate under Coulomb friction.  Every
environment keeps a load regardless of the policy role — roles differ only
in which networks see load information and whether the load reward is paid.

Per episode each environment draws fresh dynamics randomization, a terrain
profile from its curriculum level, a forward-velocity command and a load;
on every 15 s boundary inside an episode the base horizontal speed is set
to 2 m/s in a random direction.  Episodes end on a fall (|pitch| > 1 rad or
a torso corner touching ground), on the load leaving the plate, on timeout,
or on numerical divergence (logged and treated as a fall).

Observation layout (16):
  [0]      base pitch rate
  [1:3]    gravity direction in the base frame
  [3]      forward velocity command
  [4:8]    joint positions minus the default pose
  [8:12]   joint velocities
  [12:16]  previous action

Full state (36): the observation as an exact prefix, then forward base
velocity, nine terrain clearance samples, joint torques, joint
accelerations and per-foot contact force norms.

Randomization vector (15): the sampled values verbatim — link mass factors
(5), payload mass (kg), torso CoM offset (cm, 2), leg CoM offset (cm, 2),
ground friction, Kp/Kd/motor-strength factors, action delay (ms).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .errors import ContractViolation
from .policy import LOAD_DIM, RoleFlags
from .rewards import RewardInputs, RewardParams, RewardWeights, compute_reward
from .sim import (RobotModel, SimConfig, VecModel, VecState, collision_points,
                  kinematics, pd_torques, plate_kinematics, substep)
from .sliding_load import (LoadArrays, MODE_AIRBORNE, MODE_FALLEN,
                           MODE_ON_PLATE, load_characteristics_arrays,
                           step_load_arrays)
from .terrain import TERRAIN_KINDS, TerrainBatch, TerrainProfile

OBS_DIM = 16
STATE_DIM = 36
PRIV_DIM = 15

VERDICTS = ("running", "fell", "timeout", "load_fell")

N_LEVELS = 10                # curriculum difficulty levels per terrain kind
MAX_ROUGH_AMPLITUDE = 0.05   # m peak roughness at the top level
MAX_SLOPE_ANGLE = 0.35       # rad at the top level
STAIR_WIDTH = 0.25           # m tread width during training
HEIGHT_OFFSETS = np.linspace(-0.6, 0.6, 9)  # x offsets of clearance samples
ACTION_CLIP = 4.0            # raw policy actions clipped to +-this
LOAD_SPAWN_RANGE = 0.15      # m initial load offset from the plate centre
CONTACT_FORCE_LIMIT = 250.0  # N; above worst-case static stance so only impacts pay
PHYSICS_SUBSTEPS = 8         # 2.5 ms; 5 ms chatters in low-friction stick-slip


def weights_for(flags: RoleFlags) -> RewardWeights:
    """Reward table with the load term zeroed for roles trained without it."""
    w = RewardWeights()
    if not flags.load_rewards:
        w = replace(w, load_lin_velocity=0.0)
    return w


@dataclass(frozen=True)
class LoadScript:
    """Fixed load used instead of randomization (evaluation scenarios).

    spawn "riding" places the load at rest on the plate centre; "drop"
    releases it in the air above the robot CoM with a horizontal velocity.
    """

    mass: float = 7.0
    mu: float = 0.01
    size: float = 0.1
    spawn: str = "riding"
    drop_height: float = 0.3   # m above the robot CoM
    drop_vel: float = 0.2      # m/s horizontal at release

    def __post_init__(self):
        if self.spawn not in ("riding", "drop"):
            raise ContractViolation(
                f"load spawn must be 'riding' or 'drop', got {self.spawn!r}")
        if self.mass <= 0 or self.size <= 0 or self.mu < 0:
            raise ContractViolation("load script needs mass, size > 0, mu >= 0")


def check_termination(pitch: np.ndarray, corner_contact: np.ndarray,
                      load_mode: np.ndarray, elapsed: np.ndarray,
                      max_steps: int) -> dict[str, np.ndarray]:
    """Mutually exclusive episode verdict masks.

    A fall (|pitch| > 1 rad or a torso corner touching ground) wins over the
    load falling, which wins over timeout; the rest are running.
    """
    pitch = np.atleast_1d(np.asarray(pitch, dtype=np.float64))
    corner_contact = np.atleast_1d(corner_contact)
    load_mode = np.atleast_1d(load_mode)
    elapsed = np.atleast_1d(elapsed)
    fell = (np.abs(pitch) > 1.0) | corner_contact
    load_fell = (load_mode == MODE_FALLEN) & ~fell
    timeout = (np.asarray(elapsed) >= max_steps) & ~fell & ~load_fell
    running = ~(fell | load_fell | timeout)
    return {"running": running, "fell": fell, "load_fell": load_fell,
            "timeout": timeout}


@dataclass
class EnvObs:
    """One control step of network inputs, batched over environments."""

    obs: np.ndarray    # (N, 16)
    state: np.ndarray  # (N, 36)
    priv: np.ndarray   # (N, 15)
    load: np.ndarray   # (N, 4) ground-truth load characteristics
    hist: np.ndarray   # (N, frames*16) flattened observation history


@dataclass(frozen=True)
class EpisodeStats:
    """Summary of one finished episode, emitted through step() info."""

    env: int
    verdict: str
    length: int
    reward: float
    tracking_mean: float   # mean per-step linear-velocity tracking reward
    traveled: float        # displacement along the command direction, m
    cmd: float
    level: int
    kind: str


class VecEnv:
    """Lockstep batch of planar robots with sliding loads.

    All stochastic choices flow from one generator seeded at construction,
    and resets are processed in increasing environment index, so a run is a
    pure function of (config, seed, action sequence).
    """

    def __init__(self, cfg: RunConfig, role, seed,
                 model: RobotModel | None = None,
                 load_script: LoadScript | None = None,
                 terrain: TerrainProfile | None = None,
                 terminate_on_fall: bool = True):
        flags = RoleFlags.from_name(role) if isinstance(role, str) else role
        d = cfg.dims
        if (d.obs_dim, d.state_dim, d.priv_dim) != (OBS_DIM, STATE_DIM, PRIV_DIM):
            raise ContractViolation(
                f"environment emits dims ({OBS_DIM}, {STATE_DIM}, {PRIV_DIM}); "
                f"config asks ({d.obs_dim}, {d.state_dim}, {d.priv_dim})")
        if d.n_actions != 4:
            raise ContractViolation("planar robot has 4 actuated joints")
        self.cfg = cfg
        self.flags = flags
        self.n = cfg.n_envs
        self.model = model or RobotModel()
        self.sim = SimConfig(kp=cfg.kp, kd=cfg.kd, substeps=PHYSICS_SUBSTEPS)
        if isinstance(seed, (int, np.integer)):
            seed = np.uint64(np.int64(seed))
        self.rng = np.random.default_rng(seed)
        self.load_script = load_script
        self.fixed_terrain = terrain
        # False lets physics-only probes watch the load's fate on a robot
        # that has gone down; policy evaluation always keeps it True.
        self.terminate_on_fall = terminate_on_fall
        self.weights = weights_for(flags)
        self.rparams = RewardParams(h_des=self.model.h_des,
                                    contact_force_limit=CONTACT_FORCE_LIMIT)
        self.frames = d.history_frames
        self.push_every = max(1, int(round(cfg.push_interval_s
                                           * self.sim.control_hz)))
        self._noise = self._noise_scales(cfg)
        self._default_q = np.array(self.model.default_q)
        self._q_low = np.array(self.model.q_lower)
        self._q_up = np.array(self.model.q_upper)
        self._half_len = self.model.plate_len / 2.0

        n = self.n
        self.vm = VecModel.from_model(self.model, n)
        self.vs = VecState.zeros(n)
        self.tb = TerrainBatch.from_profiles([TerrainProfile()] * n)
        self.ld = LoadArrays.zeros(n)
        self.levels = np.zeros(n, dtype=np.int64)
        if cfg.terrain_curriculum:
            self.kinds = [TERRAIN_KINDS[i % len(TERRAIN_KINDS)]
                          for i in range(n)]
        else:
            self.kinds = ["plane"] * n

        self.ep_step = np.zeros(n, dtype=np.int64)
        self.cmd_vx = np.zeros(n)
        self.priv = np.zeros((n, PRIV_DIM))
        self.delay_sub = np.zeros(n, dtype=np.int64)
        self.prev_action = np.zeros((n, 4))
        self.prev_action2 = np.zeros((n, 4))
        self.q_des_last = np.tile(self._default_q, (n, 1))
        self.air_time = np.zeros((n, 2))
        self.was_contact = np.ones((n, 2), dtype=bool)
        self.hist = np.zeros((n, self.frames, OBS_DIM))
        self.ep_return = np.zeros(n)
        self.ep_tracking = np.zeros(n)
        self.x_start = np.zeros(n)
        self.diverged_total = 0

    # --- construction helpers ------------------------------------------

    @staticmethod
    def _noise_scales(cfg: RunConfig) -> np.ndarray:
        s = np.zeros(OBS_DIM)
        if cfg.noise.enabled:
            s[0] = cfg.noise.ang_vel
            s[1:3] = cfg.noise.gravity
            s[4:8] = cfg.noise.joint_pos
            s[8:12] = cfg.noise.joint_vel
        return s

    def _sample_profile(self, i: int) -> TerrainProfile:
        if self.fixed_terrain is not None:
            return self.fixed_terrain
        kind = self.kinds[i]
        frac = self.levels[i] / (N_LEVELS - 1)
        seed = int(self.rng.integers(0, 2 ** 31))
        if kind == "rough":
            return TerrainProfile(kind="rough",
                                  rough_amplitude=frac * MAX_ROUGH_AMPLITUDE,
                                  rough_corr_len=0.15, seed=seed)
        if kind == "stair":
            return TerrainProfile(kind="stair",
                                  step_height=frac * self.cfg.max_stair_height,
                                  step_width=STAIR_WIDTH)
        if kind == "slope":
            sign = 1.0 if self.rng.random() < 0.5 else -1.0
            return TerrainProfile(kind="slope",
                                  slope_angle=sign * frac * MAX_SLOPE_ANGLE)
        return TerrainProfile()

    # --- reset ----------------------------------------------------------

    def _reset_envs(self, idx: np.ndarray) -> None:
        """Fresh episode for environments idx (sorted ascending)."""
        k = idx.size
        if k == 0:
            return
        rng, dr = self.rng, self.cfg.dr
        for i in idx:
            self.tb.set_profile(int(i), self._sample_profile(int(i)))

        mass_f = rng.uniform(*dr.link_mass_factor, size=(k, 5))
        payload = rng.uniform(*dr.payload_mass_kg, size=k)
        com_base = rng.uniform(*dr.com_base_cm, size=(k, 2))
        com_leg = rng.uniform(*dr.com_leg_cm, size=(k, 2))
        friction = rng.uniform(*dr.friction, size=k)
        kp_f = rng.uniform(*dr.kp_factor, size=k)
        kd_f = rng.uniform(*dr.kd_factor, size=k)
        motor_f = rng.uniform(*dr.motor_strength_factor, size=k)
        delay_ms = rng.uniform(*dr.action_delay_ms, size=k)

        nom_m = np.array(self.model.masses)
        nom_i = np.array(self.model.inertias)
        self.vm.masses[idx] = nom_m * mass_f
        self.vm.masses[idx, 0] += payload
        self.vm.inertias[idx] = nom_i * mass_f
        self.vm.torso_com[idx] = com_base / 100.0
        self.vm.leg_com[idx] = com_leg / 100.0
        self.vm.ground_mu[idx] = friction
        self.vm.kp_scale[idx] = kp_f
        self.vm.kd_scale[idx] = kd_f
        self.vm.motor_scale[idx] = motor_f
        self.delay_sub[idx] = np.rint(
            delay_ms / (self.sim.substep_dt * 1000.0)).astype(np.int64)
        self.priv[idx] = np.concatenate(
            [mass_f, payload[:, None], com_base, com_leg, friction[:, None],
             kp_f[:, None], kd_f[:, None], motor_f[:, None],
             delay_ms[:, None]], axis=1)

        self._sample_load(idx)
        self._reset_pose(idx)
        self._settle(idx)
        self._finalize_load(idx)

        self.cmd_vx[idx] = rng.uniform(*self.cfg.cmd_vx, size=k)
        self.ep_step[idx] = 0
        self.ep_return[idx] = 0.0
        self.ep_tracking[idx] = 0.0
        self.prev_action[idx] = 0.0
        self.prev_action2[idx] = 0.0
        self.q_des_last[idx] = self._default_q
        self.air_time[idx] = 0.0
        self.was_contact[idx] = True
        self.hist[idx] = 0.0
        self.x_start[idx] = self.vs.q[idx, 0]

    def _sample_load(self, idx: np.ndarray) -> None:
        """Draw the episode's load parameters.  Airborne drop positions are
        filled in by _finalize_load once the robot pose has settled."""
        k = idx.size
        rng, dr = self.rng, self.cfg.dr
        script = self.load_script
        if script is None:
            self.ld.mass[idx] = rng.uniform(*dr.load_mass_kg, size=k)
            self.ld.size[idx] = rng.uniform(*dr.load_size_m, size=k)
            self.ld.mu[idx] = rng.uniform(*dr.load_friction, size=k)
            self.ld.s[idx] = rng.uniform(-LOAD_SPAWN_RANGE, LOAD_SPAWN_RANGE,
                                         size=k)
            speed = rng.uniform(*dr.load_init_vel, size=k)
            sign = np.where(rng.random(k) < 0.5, -1.0, 1.0)
            self.ld.ds[idx] = sign * speed
            self.ld.mode[idx] = MODE_ON_PLATE
        else:
            self.ld.mass[idx] = script.mass
            self.ld.size[idx] = script.size
            self.ld.mu[idx] = script.mu
            self.ld.s[idx] = 0.0
            self.ld.ds[idx] = 0.0
            self.ld.mode[idx] = (MODE_ON_PLATE if script.spawn == "riding"
                                 else MODE_AIRBORNE)
        self.ld.wp[idx] = 0.0
        self.ld.wv[idx] = 0.0

    def _finalize_load(self, idx: np.ndarray) -> None:
        script = self.load_script
        if script is None or script.spawn != "drop":
            return
        com = self._robot_com(idx)
        self.ld.wp[idx, 0] = com[:, 0]
        self.ld.wp[idx, 1] = com[:, 1] + script.drop_height
        self.ld.wv[idx, 0] = script.drop_vel
        self.ld.wv[idx, 1] = 0.0

    def _load_static_weight(self, idx: np.ndarray) -> np.ndarray:
        """(k,) static weight of loads that start riding the plate."""
        on_plate = self.ld.mode[idx] == MODE_ON_PLATE
        return np.where(on_plate, self.ld.mass[idx], 0.0) * self.sim.gravity

    def _robot_com(self, idx: np.ndarray) -> np.ndarray:
        """(k, 2) world centre of mass of the robots idx."""
        sub_vm = self._sub_model(idx)
        sub = VecState.zeros(idx.size)
        sub.q[:] = self.vs.q[idx]
        kin = kinematics(sub, sub_vm)
        m = sub_vm.masses
        return np.einsum("nb,nbi->ni", m, kin.body_pos) / m.sum(1)[:, None]

    def _sub_model(self, idx: np.ndarray) -> VecModel:
        return VecModel(masses=self.vm.masses[idx],
                        inertias=self.vm.inertias[idx],
                        torso_com=self.vm.torso_com[idx],
                        leg_com=self.vm.leg_com[idx],
                        kp_scale=self.vm.kp_scale[idx],
                        kd_scale=self.vm.kd_scale[idx],
                        motor_scale=self.vm.motor_scale[idx],
                        ground_mu=self.vm.ground_mu[idx],
                        nominal=self.model)

    def _sub_terrain(self, idx: np.ndarray) -> TerrainBatch:
        return TerrainBatch(kind=self.tb.kind[idx].copy(),
                            p1=self.tb.p1[idx].copy(),
                            p2=self.tb.p2[idx].copy(),
                            seed=self.tb.seed[idx].copy(),
                            profiles=[self.tb.profiles[int(i)] for i in idx])

    def _settle(self, idx: np.ndarray, n_substeps: int = 40) -> None:
        """Run fresh environments to a coupled near-equilibrium before load
        dynamics go live.  A load that starts on the plate presses with its
        static weight (its own dynamics stay frozen, so the fall checks
        cannot fire while the stance is still converging)."""
        k = idx.size
        sub_vm = self._sub_model(idx)
        sub = VecState(q=self.vs.q[idx].copy(), qd=self.vs.qd[idx].copy(),
                       qdd=self.vs.qdd[idx].copy(), tau=self.vs.tau[idx].copy(),
                       foot_f=self.vs.foot_f[idx].copy(),
                       anchor=self.vs.anchor[idx].copy())
        tb = self._sub_terrain(idx)
        q_des = np.tile(self._default_q, (k, 1))
        fz = -self._load_static_weight(idx)
        s_off = self.ld.s[idx]
        for _ in range(n_substeps):
            pk = plate_kinematics(sub, sub_vm)
            t_hat = np.stack([np.cos(pk.angle), np.sin(pk.angle)], axis=1)
            point = pk.pos + s_off[:, None] * t_hat
            arm = point - sub.q[:, :2]
            ext_f = np.stack([np.zeros(k), fz], axis=1)
            ext_t = arm[:, 0] * fz
            tau = pd_torques(q_des, sub, sub_vm, self.sim)
            substep(sub, sub_vm, tb, tau, ext_f, ext_t, self.sim,
                    self.sim.substep_dt)
        self.vs.q[idx] = sub.q
        self.vs.qd[idx] = sub.qd
        self.vs.qdd[idx] = sub.qdd
        self.vs.tau[idx] = sub.tau
        self.vs.foot_f[idx] = sub.foot_f
        self.vs.anchor[idx] = sub.anchor

    def _reset_pose(self, idx: np.ndarray) -> None:
        """Default standing pose in exact two-foot static equilibrium,
        including the weight of a load that starts riding the plate.

        Solves base height and pitch so each foot's contact-spring
        penetration carries its static share of the total weight; starting
        anywhere else rings the lightly damped contact modes hard enough
        to shake a freshly placed load off the plate."""
        k = idx.size
        sub_vm = self._sub_model(idx)
        sub = VecState.zeros(k)
        sub.q[:, 3:] = self._default_q + self.rng.uniform(
            -0.05, 0.05, size=(k, 4))
        sub.q[:, 1] = 1.0
        kin = kinematics(sub, sub_vm)
        rel = kin.feet_pos - sub.q[:, None, :2]        # feet minus base, pitch 0
        ground = self._sub_heights(idx, kin.feet_pos[:, :, 0])
        m = sub_vm.masses
        w_robot = m.sum(axis=1) * self.sim.gravity
        w_load = self._load_static_weight(idx)
        x_load = sub.q[:, 0] + self.ld.s[idx]          # plate point at pitch 0
        weight = w_robot + w_load
        com_x = (np.einsum("nb,nb->n", m, kin.body_pos[:, :, 0])
                 * self.sim.gravity + w_load * x_load) / weight
        x_a, x_b = kin.feet_pos[:, 0, 0], kin.feet_pos[:, 1, 0]
        share_a = weight * (com_x - x_b) / (x_a - x_b)
        pen = np.stack([share_a, weight - share_a], axis=1) / self.sim.contact_kp
        target = ground - pen                          # foot heights at balance
        theta = ((target[:, 0] - target[:, 1]) - (rel[:, 0, 1] - rel[:, 1, 1])) \
            / (rel[:, 0, 0] - rel[:, 1, 0])
        sub.q[:, 1] = target[:, 0] - rel[:, 0, 1] - theta * rel[:, 0, 0]
        sub.q[:, 2] = theta
        kin = kinematics(sub, sub_vm)
        self.vs.q[idx] = sub.q
        self.vs.qd[idx] = 0.0
        self.vs.qdd[idx] = 0.0
        self.vs.tau[idx] = 0.0
        self.vs.foot_f[idx] = 0.0
        self.vs.anchor[idx] = kin.feet_pos

    def _sub_heights(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Terrain heights for a subset of environments; x is (k, ...)."""
        full = np.zeros((self.n,) + x.shape[1:])
        full[idx] = x
        return self.tb.heights(full)[idx]

    def reset_all(self) -> EnvObs:
        self._reset_envs(np.arange(self.n))
        return self._observe()

    # --- stepping -------------------------------------------------------

    def step(self, actions: np.ndarray):
        """Advance one control period.

        Returns (EnvObs, rewards (N,), dones (N,), info).  Environments
        that finish an episode are reset in place; the returned
        observations for those rows belong to the new episode.
        """
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n, 4):
            raise ContractViolation(
                f"actions must be ({self.n}, 4), got {actions.shape}")
        a = np.clip(actions, -ACTION_CLIP, ACTION_CLIP)
        q_des = self._default_q + self.cfg.action_scale * a

        push_due = (self.ep_step > 0) & (self.ep_step % self.push_every == 0)
        if push_due.any():
            direction = np.where(self.rng.random(self.n) < 0.5, -1.0, 1.0)
            self.vs.qd[push_due, 0] = (self.cfg.push_speed
                                       * direction[push_due])

        diverged = np.zeros(self.n, dtype=bool)
        dt = self.sim.substep_dt
        for k in range(self.sim.substeps):
            pk = plate_kinematics(self.vs, self.vm)
            out = step_load_arrays(self.ld, pk.pos, pk.vel, pk.acc, pk.angle,
                                   pk.ang_vel, pk.ang_acc, self._half_len,
                                   self.sim.gravity, dt)
            arm = out.point - self.vs.q[:, :2]
            ext_torque = arm[:, 0] * out.force[:, 1] \
                - arm[:, 1] * out.force[:, 0]
            use_prev = (k < self.delay_sub)[:, None]
            q_eff = np.where(use_prev, self.q_des_last, q_des)
            tau = pd_torques(q_eff, self.vs, self.vm, self.sim)
            bad = substep(self.vs, self.vm, self.tb, tau, out.force,
                          ext_torque, self.sim, dt)
            fresh = bad & ~diverged
            if fresh.any():
                self._quarantine(np.flatnonzero(fresh))
            diverged |= bad
        self.diverged_total += int(diverged.sum())

        q, qd = self.vs.q, self.vs.qd
        pitch = q[:, 2]
        c, s = np.cos(pitch), np.sin(pitch)
        vx_b = c * qd[:, 0] + s * qd[:, 1]
        vz_b = -s * qd[:, 0] + c * qd[:, 1]

        force_norm = np.linalg.norm(self.vs.foot_f, axis=-1)   # (N,2)
        contact = force_norm > 0.0
        self.air_time += self.sim.control_dt
        touchdown = contact & ~self.was_contact
        air_credit = np.sum(
            touchdown * (self.air_time - self.rparams.air_time_offset),
            axis=-1)
        self.air_time[contact] = 0.0
        self.was_contact = contact

        cp = collision_points(self.vs, self.vm)
        below = cp[:, :, 1] < self.tb.heights(cp[:, :, 0])
        n_collision = below.sum(axis=1).astype(np.float64)
        corner_hit = below[:, 2:].any(axis=1)
        qj = q[:, 3:]
        n_limit = ((qj < self._q_low) | (qj > self._q_up)) \
            .sum(axis=1).astype(np.float64)
        base_height = q[:, 1] - self.tb.heights(q[:, 0])
        on_plate = self.ld.mode == MODE_ON_PLATE

        inputs = RewardInputs(
            vx=vx_b, vz=vz_b, omega=qd[:, 2], cmd_vx=self.cmd_vx,
            cmd_omega=np.zeros(self.n), qd=qd[:, 3:], qdd=self.vs.qdd[:, 3:],
            tau=self.vs.tau, base_height=base_height, action=a,
            prev_action=self.prev_action, prev_action2=self.prev_action2,
            n_collision=n_collision, n_limit=n_limit, air_credit=air_credit,
            foot_force_norm=force_norm, load_speed=np.abs(self.ld.ds),
            load_present=on_plate.astype(np.float64))
        breakdown = compute_reward(inputs, self.weights, self.rparams)
        rew = np.where(diverged, 0.0, breakdown.total)

        self.ep_step += 1
        self.ep_return += rew
        self.ep_tracking += np.where(diverged, 0.0,
                                     breakdown.terms["lin_vel_tracking"])
        self.prev_action2 = self.prev_action.copy()
        self.prev_action = a.copy()
        self.q_des_last = q_des

        if self.terminate_on_fall:
            verdicts = check_termination(pitch, corner_hit, self.ld.mode,
                                         self.ep_step,
                                         self.cfg.episode_steps)
        else:
            verdicts = check_termination(np.zeros_like(pitch),
                                         np.zeros_like(corner_hit),
                                         self.ld.mode, self.ep_step,
                                         self.cfg.episode_steps)
        fell = verdicts["fell"] | diverged
        load_fell = verdicts["load_fell"] & ~diverged
        timeout = verdicts["timeout"] & ~diverged
        dones = fell | load_fell | timeout
        time_outs = timeout

        episodes, done_idx = [], np.flatnonzero(dones)
        for i in done_idx:
            verdict = ("fell" if fell[i]
                       else "load_fell" if load_fell[i] else "timeout")
            length = int(self.ep_step[i])
            cmd = float(self.cmd_vx[i])
            traveled = float((q[i, 0] - self.x_start[i]) * np.sign(cmd))
            episodes.append(EpisodeStats(
                env=int(i), verdict=verdict, length=length,
                reward=float(self.ep_return[i]),
                tracking_mean=float(self.ep_tracking[i]) / length,
                traveled=traveled, cmd=cmd, level=int(self.levels[i]),
                kind=self.kinds[i]))
            if self.cfg.terrain_curriculum:
                self._update_curriculum(int(i), episodes[-1])

        term_means = {name: float(np.where(diverged, 0.0, t).mean())
                      for name, t in breakdown.terms.items()}
        airborne = self.ld.mode == MODE_AIRBORNE
        rel_air = np.linalg.norm(self.ld.wv - qd[:, :2], axis=-1)
        load_speed = np.where(on_plate, np.abs(self.ld.ds),
                              np.where(airborne, rel_air, 0.0))
        info = {
            "episodes": episodes,
            "time_outs": time_outs,
            "terms": term_means,
            "diverged": int(diverged.sum()),
            "mean_level": float(self.levels.mean()),
            "metrics": {
                "vx": vx_b.copy(), "pitch": pitch.copy(),
                "load_speed": load_speed, "load_pos": self.ld.s.copy(),
                "on_plate": on_plate.copy(),
            },
        }
        self._reset_envs(done_idx)
        return self._observe(), rew, dones, info

    def _quarantine(self, idx: np.ndarray) -> None:
        """Park diverged environments in a safe pose until their reset."""
        self.vs.q[idx] = 0.0
        self.vs.q[idx, 1] = 2.0 * self.model.h_des
        self.vs.q[idx, 3:] = self._default_q
        self.vs.qd[idx] = 0.0
        self.vs.qdd[idx] = 0.0
        self.vs.tau[idx] = 0.0
        self.vs.foot_f[idx] = 0.0
        sub = VecState.zeros(idx.size)
        sub.q[:] = self.vs.q[idx]
        sub_vm = VecModel.from_model(self.model, idx.size)
        self.vs.anchor[idx] = kinematics(sub, sub_vm).feet_pos
        self.ld.mode[idx] = MODE_FALLEN
        self.ld.s[idx] = 0.0
        self.ld.ds[idx] = 0.0
        self.ld.wp[idx] = 0.0
        self.ld.wv[idx] = 0.0

    def _update_curriculum(self, i: int, ep: EpisodeStats) -> None:
        max_track = self.weights.lin_vel_tracking
        elapsed = ep.length * self.sim.control_dt
        commanded = abs(ep.cmd) * elapsed
        if abs(ep.cmd) > self.rparams.cmd_deadband \
                and ep.traveled < self.cfg.demote_distance_ratio * commanded:
            if self.levels[i] > 0:
                self.levels[i] = self.rng.integers(0, self.levels[i])
        elif ep.tracking_mean > self.cfg.promote_tracking * max_track:
            self.levels[i] = min(self.levels[i] + 1, N_LEVELS - 1)

    # --- observation ----------------------------------------------------

    def _observe(self) -> EnvObs:
        q, qd = self.vs.q, self.vs.qd
        pitch = q[:, 2]
        c, s = np.cos(pitch), np.sin(pitch)
        obs = np.empty((self.n, OBS_DIM))
        obs[:, 0] = qd[:, 2]
        obs[:, 1] = -s
        obs[:, 2] = -c
        obs[:, 3] = self.cmd_vx
        obs[:, 4:8] = q[:, 3:] - self._default_q
        obs[:, 8:12] = qd[:, 3:]
        obs[:, 12:16] = self.prev_action
        if self.cfg.noise.enabled:
            obs += self.rng.uniform(-1.0, 1.0, size=obs.shape) * self._noise

        vx_b = c * qd[:, 0] + s * qd[:, 1]
        samples = q[:, 0:1] + HEIGHT_OFFSETS[None, :]
        clearance = q[:, 1:2] - self.tb.heights(samples)
        force_norm = np.linalg.norm(self.vs.foot_f, axis=-1)
        state = np.concatenate(
            [obs, vx_b[:, None], clearance, self.vs.tau,
             self.vs.qdd[:, 3:], force_norm], axis=1)

        load = load_characteristics_arrays(self.ld)
        self.hist[:, :-1] = self.hist[:, 1:]
        self.hist[:, -1] = obs
        return EnvObs(obs=obs, state=state, priv=self.priv.copy(), load=load,
                      hist=self.hist.reshape(self.n, -1).copy())
