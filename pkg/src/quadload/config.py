"""Run configuration: strict schema, named presets, canonical manifest.

Every training-relevant number lives here so a run is fully described by
(config, seed).  Two presets ship:

  desk    64 envs, 1500 + 300 iterations, narrow nets — fits a laptop CPU
  paper   8192 envs, 7500 + 1500 iterations, wide nets — the published
          hyperparameters, selectable but far beyond desk budgets

`config_manifest` renders a config to a canonical YAML string (sorted keys,
derived batch sizes spelled out) which is what run manifests embed and what
the golden-file test compares against.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, is_dataclass, replace

import yaml

from .errors import ConfigError
from .policy import ROLES, NetDims
from .ppo import PpoConfig

MANIFEST_FORMAT = 1


def _range2(name, value, lo_ok=None):
    if len(value) != 2 or not all(isinstance(v, (int, float)) for v in value):
        raise ConfigError(f"{name} must be a (low, high) pair")
    if value[0] > value[1]:
        raise ConfigError(f"{name} range is inverted: {value}")
    if lo_ok is not None and value[0] < lo_ok:
        raise ConfigError(f"{name} lower bound must be >= {lo_ok}")


@dataclass(frozen=True)
class DomainRandomization:
    """Per-environment physics randomization ranges."""

    link_mass_factor: tuple = (0.8, 1.2)      # x nominal
    payload_mass_kg: tuple = (-1.0, 3.0)      # fixed extra torso mass
    com_base_cm: tuple = (-5.0, 5.0)
    com_leg_cm: tuple = (-1.5, 1.5)
    friction: tuple = (0.05, 1.25)            # foot-ground
    kp_factor: tuple = (0.8, 1.2)
    kd_factor: tuple = (0.8, 1.2)
    motor_strength_factor: tuple = (0.8, 1.2)
    action_delay_ms: tuple = (0.0, 10.0)
    load_mass_kg: tuple = (0.001, 8.0)
    load_size_m: tuple = (0.025, 0.15)
    load_friction: tuple = (0.001, 0.2)
    load_init_vel: tuple = (0.0, 0.5)

    def __post_init__(self):
        _range2("link_mass_factor", self.link_mass_factor, lo_ok=0.0)
        _range2("payload_mass_kg", self.payload_mass_kg)
        _range2("com_base_cm", self.com_base_cm)
        _range2("com_leg_cm", self.com_leg_cm)
        _range2("friction", self.friction, lo_ok=0.0)
        _range2("kp_factor", self.kp_factor, lo_ok=0.0)
        _range2("kd_factor", self.kd_factor, lo_ok=0.0)
        _range2("motor_strength_factor", self.motor_strength_factor, lo_ok=0.0)
        _range2("action_delay_ms", self.action_delay_ms, lo_ok=0.0)
        _range2("load_mass_kg", self.load_mass_kg, lo_ok=0.0)
        _range2("load_size_m", self.load_size_m, lo_ok=0.0)
        _range2("load_friction", self.load_friction, lo_ok=0.0)
        _range2("load_init_vel", self.load_init_vel, lo_ok=0.0)


@dataclass(frozen=True)
class NoiseConfig:
    """Uniform observation-noise scales, per channel."""

    enabled: bool = True
    ang_vel: float = 0.2       # rad/s
    gravity: float = 0.05
    joint_pos: float = 0.01    # rad
    joint_vel: float = 1.5     # rad/s

    def __post_init__(self):
        for name in ("ang_vel", "gravity", "joint_pos", "joint_vel"):
            if getattr(self, name) < 0:
                raise ConfigError(f"noise scale {name} must be >= 0")


@dataclass(frozen=True)
class SupervisedConfig:
    """Settings for the encoder-distillation and load-estimation updates."""

    epochs: int = 5
    minibatches: int = 4
    lr: float = 1.0e-3
    est_loss_weight: tuple = (3.0, 1.0, 10.0, 10.0)
    freeze_estimator_in_reinforce: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.minibatches < 1:
            raise ConfigError("supervised epochs/minibatches must be >= 1")
        if self.lr <= 0:
            raise ConfigError("supervised lr must be positive")
        if len(self.est_loss_weight) not in (4, 8):
            raise ConfigError("est_loss_weight needs 4 (planar) or 8 entries")
        if any(w <= 0 for w in self.est_loss_weight):
            raise ConfigError("est_loss_weight entries must be positive")


def planar_est_weights(weights) -> tuple:
    """Reduce the published 8-entry estimation weight [pos(3), vel(3),
    mass, friction] to the planar layout [pos, vel, mass, friction]."""
    w = tuple(float(x) for x in weights)
    if len(w) == 4:
        return w
    if len(w) == 8:
        return (w[0], w[3], w[6], w[7])
    raise ConfigError(f"est_loss_weight has {len(w)} entries, want 4 or 8")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    role: str = "ours"
    seed: int = 0
    n_envs: int = 64
    teacher_iters: int = 1500
    reinforce_iters: int = 300
    episode_steps: int = 1000          # 20 s at the 50 Hz control rate
    push_interval_s: float = 15.0
    push_speed: float = 2.0
    cmd_vx: tuple = (-1.0, 1.0)
    cmd_omega: tuple = (0.0, 0.0)      # planar robot cannot yaw
    kp: float = 40.0
    kd: float = 1.0
    action_scale: float = 0.25
    terrain_curriculum: bool = True
    max_stair_height: float = 0.085
    promote_tracking: float = 0.8
    demote_distance_ratio: float = 0.5
    checkpoint_every: int = 500
    dims: NetDims = NetDims()
    ppo: PpoConfig = PpoConfig()
    supervised: SupervisedConfig = SupervisedConfig()
    dr: DomainRandomization = DomainRandomization()
    noise: NoiseConfig = NoiseConfig()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.n_envs < 1:
            raise ConfigError("n_envs must be >= 1")
        if self.teacher_iters <= 0 or self.reinforce_iters <= 0:
            raise ConfigError("iteration counts must be > 0")
        if self.episode_steps < 1:
            raise ConfigError("episode_steps must be >= 1")
        if self.kp <= 0 or self.kd < 0:
            raise ConfigError("kp must be > 0 and kd >= 0")
        if not (0 < self.promote_tracking <= 1):
            raise ConfigError("promote_tracking must be in (0, 1]")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        _range2("cmd_vx", self.cmd_vx)
        _range2("cmd_omega", self.cmd_omega)

    @property
    def batch_size(self) -> int:
        return self.n_envs * self.ppo.steps_per_iter

    @property
    def minibatch_size(self) -> int:
        return self.batch_size // self.ppo.minibatches


def desk_preset() -> RunConfig:
    return RunConfig()


def paper_preset() -> RunConfig:
    return RunConfig(
        preset="paper",
        n_envs=8192,
        teacher_iters=7500,
        reinforce_iters=1500,
        kp=20.0,
        kd=0.5,
        dims=NetDims(latent_dim=32,
                     encoder_hidden=(512, 256, 128),
                     estimator_hidden=(512, 256, 64),
                     actor_hidden=(512, 256, 128),
                     critic_hidden=(512, 256, 128)),
        supervised=SupervisedConfig(
            est_loss_weight=(3.0, 3.0, 3.0, 1.0, 1.0, 1.0, 10.0, 10.0)),
    )


PRESETS = {"desk": desk_preset, "paper": paper_preset}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return PRESETS[name]()


def _to_plain(value):
    if is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name))
                for f in fields(value)}
    if isinstance(value, tuple):
        return [_to_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def _merge_dataclass(base, overrides: dict, path: str):
    known = {f.name: f for f in fields(base)}
    kw = {}
    for key, value in overrides.items():
        full = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key {full!r}")
        current = getattr(base, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{full!r} must be a mapping")
            kw[key] = _merge_dataclass(current, value, full)
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{full!r} must be a list")
            kw[key] = tuple(value)
        else:
            kw[key] = value
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value under {path or 'config'!r}: {exc}") from exc


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    d = dict(d)
    base = preset(d.get("preset", "desk"))
    return _merge_dataclass(base, d, "")


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def config_manifest(cfg: RunConfig) -> str:
    """Canonical YAML rendering: full config plus spelled-out derived sizes."""
    doc = {
        "manifest_format": MANIFEST_FORMAT,
        "config": config_to_dict(cfg),
        "derived": {
            "batch_size": f"{cfg.n_envs} x {cfg.ppo.steps_per_iter}",
            "minibatch_size":
                f"{cfg.n_envs} x "
                f"{cfg.ppo.steps_per_iter // cfg.ppo.minibatches}",
            "learning_rate": "adaptive",
            "history_frames": cfg.dims.history_frames,
        },
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=None,
                          width=120)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_manifest(cfg).encode("utf-8")).hexdigest()
