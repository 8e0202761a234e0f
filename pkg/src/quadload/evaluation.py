"""Comparative evaluation: dynamic terrain runs and a stationary load drop.

Every policy deploys the way it would run on hardware: mean (noise-free)
actions, the latent taken from the proprioceptive history encoder, and no
simulator state in the actor input — except the oracle role, which by
definition reads the simulator's true load characteristics.  Physics
randomization is collapsed to nominal values so runs are a pure function of
(checkpoint, scenario, seed).

Scenario cells are mutually independent and individually deterministic, so a
caller may fan them out across processes; this module runs them sequentially.

Raw per-step logs use a plain CSV with a fixed column order (see
``RAW_COLUMNS``); floats are written with 17 significant digits so reading
the file back reproduces the series bitwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import DomainRandomization, RunConfig, desk_preset
from .env import LoadScript, VecEnv
from .errors import ContractViolation, RoleMismatchError
from .policy import ROLES, PolicyBundle
from .terrain import TERRAIN_KINDS, TerrainProfile

CONTROL_HZ = 50
FINAL_WINDOW_S = 5.0            # summary window at the end of a run
STAIR_STEP_HEIGHT = 0.05        # m
STAIR_STEP_WIDTH = 0.2          # m
SLOPE_ANGLE = np.deg2rad(26.0)  # rad
ROUGH_AMPLITUDE = 0.02          # m peak; gentle enough to walk blind
ROUGH_CORR_LEN = 0.15           # m

DEFAULT_DYNAMIC_LOAD = LoadScript(mass=7.0, mu=0.01, size=0.1, spawn="riding")
DEFAULT_DROP_LOAD = LoadScript(mass=7.0, mu=0.02, size=0.1, spawn="drop",
                               drop_height=0.3, drop_vel=0.2)

RAW_COLUMNS = ("step", "tracking_error", "pitch", "load_speed",
               "load_position", "verdict")
TABLE_COLUMNS = ("scenario", "role", "metric", "mean", "std", "falls")
SUMMARY_METRICS = ("tracking_error", "pitch_final", "load_speed_final",
                   "load_lost")
ROLE_ORDER = ("nlw", "lw", "oracle", "ours")


@dataclass(frozen=True)
class ScenarioSpec:
    """One evaluation cell: terrain, load, command, duration, role, seed."""

    name: str
    role: str = "ours"
    mode: str = "dynamic"              # dynamic | stationary
    terrain: str = "plane"
    load: LoadScript = DEFAULT_DYNAMIC_LOAD
    cmd_vx: float = 1.0                # m/s forward command
    duration_s: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ContractViolation("scenario duration must be > 0")
        if self.mode not in ("dynamic", "stationary"):
            raise ContractViolation(f"unknown scenario mode {self.mode!r}")
        if self.terrain not in TERRAIN_KINDS:
            raise ContractViolation(f"unknown terrain {self.terrain!r}")
        if self.role not in ROLES:
            raise ContractViolation(f"unknown role {self.role!r}")
        if self.mode == "stationary" and self.cmd_vx != 0.0:
            raise ContractViolation("the stationary test uses zero command")

    @property
    def steps(self) -> int:
        return int(round(self.duration_s * CONTROL_HZ))


@dataclass
class MetricSeries:
    """Per-step metrics of one run, truncated at episode termination."""

    tracking_error: np.ndarray   # |commanded - actual forward velocity|, m/s
    pitch: np.ndarray            # base pitch deviation from level, rad
    load_speed: np.ndarray       # |load velocity in the base frame|, m/s
    load_position: np.ndarray    # load position along the plate, m
    verdict: str                 # fell | load_fell | timeout

    def __post_init__(self):
        lengths = {len(self.tracking_error), len(self.pitch),
                   len(self.load_speed), len(self.load_position)}
        if len(lengths) != 1:
            raise ContractViolation("metric series lengths differ")

    @property
    def steps(self) -> int:
        return len(self.tracking_error)


def experiment_matrix(duration_s: float = 15.0,
                      drop_duration_s: float = 30.0) -> list:
    """The dynamic four-terrain matrix plus the stationary drop test."""
    dynamic = [ScenarioSpec(kind, terrain=kind, duration_s=duration_s)
               for kind in ("plane", "rough", "stair", "slope")]
    drop = ScenarioSpec("drop", mode="stationary", load=DEFAULT_DROP_LOAD,
                        cmd_vx=0.0, duration_s=drop_duration_s)
    return dynamic + [drop]


def nominal_randomization() -> DomainRandomization:
    """Every range collapsed to its nominal point (evaluation physics)."""
    return DomainRandomization(
        link_mass_factor=(1.0, 1.0), payload_mass_kg=(0.0, 0.0),
        com_base_cm=(0.0, 0.0), com_leg_cm=(0.0, 0.0), friction=(0.8, 0.8),
        kp_factor=(1.0, 1.0), kd_factor=(1.0, 1.0),
        motor_strength_factor=(1.0, 1.0), action_delay_ms=(0.0, 0.0),
        load_mass_kg=(1.0, 1.0), load_size_m=(0.1, 0.1),
        load_friction=(0.1, 0.1), load_init_vel=(0.0, 0.0))


def scenario_config(spec: ScenarioSpec, base: RunConfig | None = None,
                    limp: bool = False) -> RunConfig:
    """Deterministic single-robot config for one scenario cell."""
    base = base or desk_preset()
    overrides = dict(
        role=spec.role, seed=spec.seed, n_envs=1, episode_steps=spec.steps,
        cmd_vx=(spec.cmd_vx, spec.cmd_vx), push_interval_s=1.0e9,
        terrain_curriculum=False, dr=nominal_randomization(),
        noise=replace(base.noise, enabled=False))
    if limp:
        overrides.update(kp=1.0e-9, kd=0.0)
    return replace(base, **overrides)


def terrain_profile(spec: ScenarioSpec) -> TerrainProfile:
    if spec.terrain == "rough":
        return TerrainProfile(kind="rough", rough_amplitude=ROUGH_AMPLITUDE,
                              rough_corr_len=ROUGH_CORR_LEN, seed=spec.seed)
    if spec.terrain == "stair":
        return TerrainProfile(kind="stair", step_height=STAIR_STEP_HEIGHT,
                              step_width=STAIR_STEP_WIDTH)
    if spec.terrain == "slope":
        return TerrainProfile(kind="slope", slope_angle=SLOPE_ANGLE)
    return TerrainProfile()


def _load_bundle(checkpoint, role: str) -> PolicyBundle:
    """Accept a bundle or a checkpoint path; refuse role mismatches."""
    if isinstance(checkpoint, PolicyBundle):
        if checkpoint.flags.name != role:
            raise RoleMismatchError(
                f"scenario wants role {role!r}, bundle is "
                f"{checkpoint.flags.name!r}")
        return checkpoint
    bundle, _, _ = load_checkpoint(checkpoint, expected_role=role,
                                   with_optimizer=False)
    return bundle


def deploy_actions(bundle: PolicyBundle, obs: np.ndarray, hist: np.ndarray,
                   load_feed: np.ndarray | None) -> np.ndarray:
    """Mean action from deployment-available inputs.

    The latent always comes from the proprioceptive history encoder.  Only
    a "truth" actor (the oracle) consumes ``load_feed``; every other role's
    action is a function of ``obs`` and ``hist`` alone, which is the
    input-provenance guarantee the comparison rests on.
    """
    z, _ = bundle.encode_history(hist)
    src = bundle.flags.actor_load_source
    if src == "none":
        load_in = None
    elif src == "truth":
        if load_feed is None:
            raise ContractViolation(
                "oracle deployment needs the simulator load feed")
        load_in = load_feed
    else:
        load_in, _ = bundle.estimate_load(hist)
    mu, _, _ = bundle.act(obs, z, load_in, rng=None)
    return mu


def _rollout(spec: ScenarioSpec, bundle: PolicyBundle | None,
             raw_log=None) -> MetricSeries:
    cfg = scenario_config(spec, limp=bundle is None)
    # The limp null check watches the load's fate, not the robot's, so its
    # episode must survive the robot going down.
    env = VecEnv(cfg, spec.role, spec.seed, load_script=spec.load,
                 terrain=terrain_profile(spec),
                 terminate_on_fall=bundle is not None)
    ob = env.reset_all()
    n_act = cfg.dims.n_actions
    track, pitch, lspeed, lpos = [], [], [], []
    verdict = "running"
    for _ in range(spec.steps):
        if bundle is None:
            actions = np.zeros((1, n_act))
        else:
            actions = deploy_actions(bundle, ob.obs, ob.hist, ob.load)
        ob, _, dones, info = env.step(actions)
        m = info["metrics"]
        track.append(abs(spec.cmd_vx - float(m["vx"][0])))
        pitch.append(float(m["pitch"][0]))
        lspeed.append(float(m["load_speed"][0]))
        lpos.append(float(m["load_pos"][0]))
        if dones[0]:
            verdict = info["episodes"][0].verdict
            break
    series = MetricSeries(tracking_error=np.array(track),
                          pitch=np.array(pitch),
                          load_speed=np.array(lspeed),
                          load_position=np.array(lpos), verdict=verdict)
    if raw_log is not None:
        write_raw_log(raw_log, series)
    return series


def run_dynamic(spec: ScenarioSpec, checkpoint, raw_log=None) -> MetricSeries:
    """15 s (by default) terrain run under a constant forward command."""
    if spec.mode != "dynamic":
        raise ContractViolation(f"scenario {spec.name!r} is not dynamic")
    return _rollout(spec, _load_bundle(checkpoint, spec.role), raw_log)


def run_stationary(spec: ScenarioSpec, checkpoint,
                   raw_log=None) -> MetricSeries:
    """Zero-command load-drop test; ``checkpoint=None`` runs a limp robot.

    The limp variant (near-zero joint gains, zero action) is the physics
    null check: with nothing holding the robot up, the dropped slippery
    load must end up off the plate.
    """
    if spec.mode != "stationary":
        raise ContractViolation(f"scenario {spec.name!r} is not stationary")
    bundle = None if checkpoint is None else _load_bundle(checkpoint,
                                                          spec.role)
    return _rollout(spec, bundle, raw_log)


def run_scenario(spec: ScenarioSpec, checkpoint, raw_log=None) -> MetricSeries:
    if spec.mode == "dynamic":
        return run_dynamic(spec, checkpoint, raw_log)
    return run_stationary(spec, checkpoint, raw_log)


def summarize(series: MetricSeries,
              window_s: float = FINAL_WINDOW_S) -> dict:
    """Scalar summary of one run; a pure function of the series."""
    w = max(1, min(series.steps, int(round(window_s * CONTROL_HZ))))
    return {
        "tracking_error": float(np.mean(series.tracking_error)),
        "pitch_final": float(np.mean(np.abs(series.pitch[-w:]))),
        "load_speed_final": float(np.mean(series.load_speed[-w:])),
        "load_lost": float(series.verdict == "load_fell"),
    }


def write_raw_log(path, series: MetricSeries) -> None:
    lines = [",".join(RAW_COLUMNS)]
    for t in range(series.steps):
        lines.append(",".join([
            str(t + 1),
            "%.17g" % series.tracking_error[t],
            "%.17g" % series.pitch[t],
            "%.17g" % series.load_speed[t],
            "%.17g" % series.load_position[t],
            series.verdict]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_raw_log(path) -> MetricSeries:
    lines = Path(path).read_text().strip().split("\n")
    if lines[0] != ",".join(RAW_COLUMNS):
        raise ContractViolation(f"{path} is not a raw trajectory log")
    cols = [line.split(",") for line in lines[1:]]
    if not cols:
        raise ContractViolation(f"{path} holds no steps")
    return MetricSeries(
        tracking_error=np.array([float(c[1]) for c in cols]),
        pitch=np.array([float(c[2]) for c in cols]),
        load_speed=np.array([float(c[3]) for c in cols]),
        load_position=np.array([float(c[4]) for c in cols]),
        verdict=cols[-1][5])


def compare_policies(scenarios, checkpoints: dict, repeats: int = 5,
                     seed: int = 0, out_dir=None) -> list:
    """Per (scenario, role): mean +- std of each metric over paired seeds.

    ``checkpoints`` maps role names to checkpoint paths (or bundles).
    Repeat ``i`` of every cell uses seed ``seed + i``, so roles are compared
    on identical terrain, load, and initial conditions.  Missing roles leave
    explicit gaps in the table and raise a warning rather than aborting.
    """
    if repeats < 1:
        raise ContractViolation("repeats must be >= 1")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        (out_dir / "raw").mkdir(parents=True, exist_ok=True)
    rows = []
    for spec in scenarios:
        for role in ROLE_ORDER:
            missing = (role not in checkpoints
                       or checkpoints[role] is None
                       or (not isinstance(checkpoints[role], PolicyBundle)
                           and not Path(checkpoints[role]).exists()))
            if missing:
                warnings.warn(f"no checkpoint for role {role!r}; leaving "
                              f"gaps in scenario {spec.name!r}")
                for metric in SUMMARY_METRICS:
                    rows.append({"scenario": spec.name, "role": role,
                                 "metric": metric, "mean": "", "std": "",
                                 "falls": ""})
                continue
            bundle = _load_bundle(checkpoints[role], role)
            summaries, falls = [], 0
            for i in range(repeats):
                cell = replace(spec, role=role, seed=seed + i)
                raw = None
                if out_dir is not None:
                    raw = (out_dir / "raw"
                           / f"{spec.name}_{role}_seed{seed + i}.csv")
                series = run_scenario(cell, bundle, raw_log=raw)
                summaries.append(summarize(series))
                falls += series.verdict == "fell"
            for metric in SUMMARY_METRICS:
                values = np.array([s[metric] for s in summaries])
                rows.append({"scenario": spec.name, "role": role,
                             "metric": metric,
                             "mean": float(values.mean()),
                             "std": float(values.std()),
                             "falls": falls})
    if out_dir is not None:
        write_comparison_csv(out_dir / "comparison.csv", rows)
    return rows


def write_comparison_csv(path, rows) -> None:
    lines = [",".join(TABLE_COLUMNS)]
    for row in rows:
        cells = []
        for col in TABLE_COLUMNS:
            value = row[col]
            if isinstance(value, float):
                cells.append("%.12g" % value)
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def table_value(rows, scenario: str, role: str, metric: str):
    """Mean of one cell, or None when the table has a gap there."""
    for row in rows:
        if (row["scenario"] == scenario and row["role"] == role
                and row["metric"] == metric):
            return None if row["mean"] == "" else float(row["mean"])
    raise KeyError(f"no table row for {scenario}/{role}/{metric}")
