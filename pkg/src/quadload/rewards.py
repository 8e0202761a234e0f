"""Per-step reward terms for loaded locomotion.

All terms are computed batched over environments and reported individually
(the trainer logs one CSV column per term).  Weights multiply raw term
values; nothing here is scaled by the control period.

The load term 1/(1 + |v_load|) pays for keeping the load still relative to
the base and is the only load-specific shaping; role variants that train
without load rewards simply zero its weight.

The smoothness penalty defaults to the second difference
|a_t - 2 a_{t-1} + a_{t-2}|^2; set second_diff_smoothness=False for the
sign variant |a_t - 2 a_{t-1} - a_{t-2}|^2 kept for comparability.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ContractViolation

TERM_NAMES = (
    "lin_vel_tracking",
    "ang_vel_tracking",
    "lin_vel_z",
    "ang_vel_xy",
    "joint_accel",
    "joint_power",
    "joint_torque",
    "base_height",
    "action_rate",
    "action_smoothness",
    "collision",
    "joint_limit",
    "feet_air_time",
    "feet_contact_force",
    "load_lin_velocity",
)


@dataclass(frozen=True)
class RewardWeights:
    lin_vel_tracking: float = 2.0
    ang_vel_tracking: float = 0.5
    lin_vel_z: float = -2.0
    ang_vel_xy: float = -0.05
    joint_accel: float = -2.5e-7
    joint_power: float = -2.0e-5
    joint_torque: float = -1.0e-5
    base_height: float = -1.2
    action_rate: float = -0.02
    action_smoothness: float = -0.001
    collision: float = -1.0
    joint_limit: float = -2.0
    feet_air_time: float = 1.0
    feet_contact_force: float = -2.0
    load_lin_velocity: float = 2.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class RewardParams:
    h_des: float = 0.30
    tracking_sharpness: float = 4.0
    air_time_offset: float = 0.5       # s, rewarded swing duration above this
    contact_force_limit: float = 100.0  # N, slack before the force penalty
    cmd_deadband: float = 0.1          # |cmd| below this gates the air-time term
    second_diff_smoothness: bool = True


@dataclass
class RewardInputs:
    """Everything one control step of reward evaluation needs, (N,...) arrays.

    Velocities are base-frame; heights are measured above the local terrain.
    air_credit already contains sum_f (t_air - offset) for feet that touched
    down this step; the command gate is applied here.
    """

    vx: np.ndarray
    vz: np.ndarray
    omega: np.ndarray
    cmd_vx: np.ndarray
    cmd_omega: np.ndarray
    qd: np.ndarray           # (N,4)
    qdd: np.ndarray          # (N,4)
    tau: np.ndarray          # (N,4)
    base_height: np.ndarray
    action: np.ndarray       # (N,4)
    prev_action: np.ndarray
    prev_action2: np.ndarray
    n_collision: np.ndarray
    n_limit: np.ndarray
    air_credit: np.ndarray
    foot_force_norm: np.ndarray  # (N,2)
    load_speed: np.ndarray       # |v_load| relative to the base
    load_present: np.ndarray     # bool; no load term credit once it is gone

    def __post_init__(self):
        n = self.vx.shape[0]
        for f in fields(self):
            arr = getattr(self, f.name)
            if arr.shape[0] != n:
                raise ContractViolation(f"reward input {f.name} has batch "
                                        f"{arr.shape[0]}, expected {n}")


@dataclass
class RewardBreakdown:
    terms: dict[str, np.ndarray] = field(default_factory=dict)
    total: np.ndarray | None = None


def compute_reward(inp: RewardInputs, w: RewardWeights,
                   p: RewardParams) -> RewardBreakdown:
    k = p.tracking_sharpness
    terms: dict[str, np.ndarray] = {}
    terms["lin_vel_tracking"] = w.lin_vel_tracking * np.exp(
        -k * (inp.cmd_vx - inp.vx) ** 2)
    terms["ang_vel_tracking"] = w.ang_vel_tracking * np.exp(
        -k * (inp.cmd_omega - inp.omega) ** 2)
    terms["lin_vel_z"] = w.lin_vel_z * inp.vz ** 2
    # roll/yaw rates have no planar counterpart; the term is kept at zero so
    # the breakdown schema matches the full 3-D layout
    terms["ang_vel_xy"] = np.zeros_like(inp.vx) * w.ang_vel_xy
    terms["joint_accel"] = w.joint_accel * np.sum(inp.qdd ** 2, axis=-1)
    terms["joint_power"] = w.joint_power * np.sum(
        np.abs(inp.tau) * np.abs(inp.qd), axis=-1)
    terms["joint_torque"] = w.joint_torque * np.sum(inp.tau ** 2, axis=-1)
    terms["base_height"] = w.base_height * (p.h_des - inp.base_height) ** 2
    terms["action_rate"] = w.action_rate * np.sum(
        (inp.action - inp.prev_action) ** 2, axis=-1)
    if p.second_diff_smoothness:
        jerk = inp.action - 2.0 * inp.prev_action + inp.prev_action2
    else:
        jerk = inp.action - 2.0 * inp.prev_action - inp.prev_action2
    terms["action_smoothness"] = w.action_smoothness * np.sum(jerk ** 2, axis=-1)
    terms["collision"] = w.collision * inp.n_collision
    terms["joint_limit"] = w.joint_limit * inp.n_limit
    gate = np.abs(inp.cmd_vx) > p.cmd_deadband
    terms["feet_air_time"] = w.feet_air_time * inp.air_credit * gate
    over = np.maximum(0.0, inp.foot_force_norm - p.contact_force_limit)
    terms["feet_contact_force"] = w.feet_contact_force * np.sum(over, axis=-1)
    terms["load_lin_velocity"] = w.load_lin_velocity \
        * inp.load_present / (1.0 + inp.load_speed)

    total = np.zeros_like(inp.vx)
    for name in TERM_NAMES:
        total = total + terms[name]
    return RewardBreakdown(terms=terms, total=total)
