"""Two-phase training loop with concurrent supervised encoder fitting.

Phase "teacher" runs PPO on the actor, critic, gaussian log-std, and the
privileged encoder, while the history encoder is distilled toward the
privileged latent and the load estimator (when the role carries one) is
regressed onto the true load characteristics, both on the same rollouts.
Phase "reinforce" freezes the privileged encoder bitwise, switches the
policy latent to the history encoder, and continues PPO through it; the
estimator keeps its supervised updates unless configured frozen.

Restart semantics: checkpoints carry network parameters and optimizer
moments, not simulator state or RNG streams.  A resumed run re-seeds the
environment and samplers from the run seed, so it continues from the saved
parameters but does not replay the rollout sequence an uninterrupted run
would have produced.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (RunConfig, config_hash, config_manifest,
                     planar_est_weights)
from .distill import load_estimation_loss, reconstruction_loss
from .env import VecEnv
from .errors import CheckpointError, ContractViolation, DivergenceError
from .policy import PolicyBundle, build_bundle
from .ppo import (PHASES, PpoOptimizers, RolloutBuffer, _actor_load,
                  _policy_latent, compute_gae, ppo_update)
from .rewards import TERM_NAMES

LOG_CSV = "train_log.csv"
CONFIG_YAML = "config.yaml"
MANIFEST_JSON = "manifest.json"
CKPT_SUFFIX = ".qlc"

CSV_COLUMNS = (
    "phase", "iteration", "lr", "surrogate", "value_loss", "entropy",
    "kl", "clip_frac", "step_reward", "ep_reward", "ep_length", "episodes",
    "recon_train", "recon_val", "est_train", "est_val", "mean_level",
    "fell", "timeout", "load_fell", "diverged",
) + tuple(f"rew_{name}" for name in TERM_NAMES)

_INT_COLUMNS = {"iteration", "episodes", "fell", "timeout", "load_fell",
                "diverged"}


@dataclass
class TrainResult:
    """Where a finished (or resumed-to-finish) run left its artifacts."""

    out_dir: Path
    csv_path: Path
    manifest_path: Path
    final_checkpoints: dict        # phase -> Path of ckpt_<phase>_final
    iterations: dict               # phase -> completed iteration count
    bundle: PolicyBundle
    wall_clock_s: float


def checkpoint_name(phase: str, iteration: int | None = None) -> str:
    """File name for a periodic (iteration given) or phase-final snapshot."""
    if iteration is None:
        return f"ckpt_{phase}_final{CKPT_SUFFIX}"
    return f"ckpt_{phase}_{iteration:05d}{CKPT_SUFFIX}"


def _new_buffer(cfg: RunConfig) -> RolloutBuffer:
    d = cfg.dims
    return RolloutBuffer(cfg.ppo.steps_per_iter, cfg.n_envs, d.obs_dim,
                         d.state_dim, d.priv_dim, d.history_dim, d.n_actions)


def _critic_inputs(bundle: PolicyBundle, ob, z: np.ndarray,
                   split_critic: bool):
    """Load/latent fed to the value head, matching the PPO loss exactly."""
    c_load = ob.load if bundle.flags.load_in_critic else None
    if split_critic:
        z, _ = bundle.encode_privileged(ob.state, ob.priv)
    return c_load, z


def _collect(env: VecEnv, bundle: PolicyBundle, cfg: RunConfig, phase: str,
             ob, buf: RolloutBuffer, rng: np.random.Generator):
    """Fill one rollout buffer; returns (last_obs, iteration aggregates)."""
    split_critic = (phase == "reinforce"
                    and cfg.ppo.reinforce_critic_latent == "teacher")
    term_sums = dict.fromkeys(TERM_NAMES, 0.0)
    episodes = []
    raw_reward = 0.0
    diverged = 0
    mean_level = 0.0
    for _ in range(cfg.ppo.steps_per_iter):
        z, _ = _policy_latent(bundle, phase, ob.state, ob.priv, ob.hist)
        load_in = _actor_load(bundle, ob.load, ob.hist)
        actions, logp, mu = bundle.act(ob.obs, z, load_in, rng)
        c_load, z_c = _critic_inputs(bundle, ob, z, split_critic)
        values = bundle.evaluate_value(ob.state, ob.priv, c_load, z_c)
        next_ob, rew, dones, info = env.step(actions)
        raw_reward += float(rew.mean())
        # Episodes cut by the step limit still have value beyond the horizon;
        # fold the critic's estimate back into their final reward.
        rew = rew + cfg.ppo.gamma * values * info["time_outs"]
        buf.add(obs=ob.obs, state=ob.state, priv=ob.priv, load=ob.load,
                hist=ob.hist, actions=actions, mu=mu, logp=logp,
                rewards=rew, dones=dones, values=values)
        episodes.extend(info["episodes"])
        diverged += info["diverged"]
        mean_level = info["mean_level"]
        for name in TERM_NAMES:
            term_sums[name] += float(info["terms"][name])
        ob = next_ob
    z, _ = _policy_latent(bundle, phase, ob.state, ob.priv, ob.hist)
    c_load, z_c = _critic_inputs(bundle, ob, z, split_critic)
    buf.bootstrap = bundle.evaluate_value(ob.state, ob.priv, c_load, z_c)
    buf.old_log_std = bundle.head.log_std.copy()
    t = cfg.ppo.steps_per_iter
    agg = {
        "step_reward": raw_reward / t,
        "episodes": episodes,
        "diverged": diverged,
        "mean_level": mean_level,
        "terms": {name: term_sums[name] / t for name in TERM_NAMES},
    }
    return ob, agg


def _supervised_update(bundle: PolicyBundle, opts: PpoOptimizers,
                       cfg: RunConfig, phase: str, buf: RolloutBuffer,
                       rng: np.random.Generator) -> dict:
    """Distill the history encoder and fit the load estimator on the buffer.

    Targets are the post-update privileged latents, treated as constants.
    During "reinforce" the history encoder belongs to PPO, so only its
    validation loss is measured here; the estimator keeps training unless
    frozen by config.  The privileged encoder must come out bitwise intact.
    """
    sup = cfg.supervised
    state_f, priv_f = buf.flat("state"), buf.flat("priv")
    hist_f, load_f = buf.flat("hist"), buf.flat("load")
    est_w = np.asarray(planar_est_weights(sup.est_loss_weight))
    ep_crc = zlib.crc32(bundle.e_p.to_flat().tobytes())
    z_target, _ = bundle.encode_privileged(state_f, priv_f)

    z_s, _ = bundle.encode_history(hist_f)
    recon_val, _ = reconstruction_loss(z_s, z_target)
    est_val = float("nan")
    if bundle.e_l is not None:
        l_hat, _ = bundle.estimate_load(hist_f)
        est_val, _ = load_estimation_loss(l_hat, load_f, est_w)

    train_es = phase == "teacher"
    train_el = bundle.e_l is not None and (
        phase == "teacher" or not sup.freeze_estimator_in_reinforce)
    recon_losses: list[float] = []
    est_losses: list[float] = []
    if train_es or train_el:
        total = state_f.shape[0]
        mb_size = total // sup.minibatches
        for _ in range(sup.epochs):
            perm = rng.permutation(total)
            for k in range(sup.minibatches):
                idx = perm[k * mb_size:(k + 1) * mb_size]
                if train_es:
                    z_s, cache = bundle.e_s.forward(hist_f[idx])
                    loss, dz = reconstruction_loss(z_s, z_target[idx])
                    grads, _ = bundle.e_s.backward(cache, dz)
                    opts.opts["e_s"].step(bundle.e_s.params, grads, lr=sup.lr)
                    recon_losses.append(loss)
                if train_el:
                    l_hat, cache = bundle.e_l.forward(hist_f[idx])
                    loss, dl = load_estimation_loss(l_hat, load_f[idx], est_w)
                    grads, _ = bundle.e_l.backward(cache, dl)
                    opts.opts["e_l"].step(bundle.e_l.params, grads, lr=sup.lr)
                    est_losses.append(loss)
    if zlib.crc32(bundle.e_p.to_flat().tobytes()) != ep_crc:
        raise ContractViolation(
            "privileged encoder changed during the supervised update")
    return {
        "recon_train": float(np.mean(recon_losses)) if recon_losses
        else float("nan"),
        "recon_val": recon_val,
        "est_train": float(np.mean(est_losses)) if est_losses
        else float("nan"),
        "est_val": est_val,
    }


def _episode_fields(episodes: list) -> dict:
    counts = {"fell": 0, "timeout": 0, "load_fell": 0}
    for ep in episodes:
        counts[ep.verdict] += 1
    if episodes:
        ep_reward = float(np.mean([ep.reward for ep in episodes]))
        ep_length = float(np.mean([ep.length for ep in episodes]))
    else:
        ep_reward = ep_length = float("nan")
    return {"ep_reward": ep_reward, "ep_length": ep_length,
            "episodes": len(episodes), **counts}


def _format_row(row: dict) -> str:
    cells = []
    for col in CSV_COLUMNS:
        value = row[col]
        if col == "phase":
            cells.append(str(value))
        elif col in _INT_COLUMNS:
            cells.append(str(int(value)))
        else:
            cells.append("%.12g" % float(value))
    return ",".join(cells)


def _require_finite(row: dict, phase: str, iteration: int) -> None:
    for key in ("lr", "surrogate", "value_loss", "kl", "step_reward"):
        if not np.isfinite(row[key]):
            raise DivergenceError(
                f"non-finite {key} in the {phase} phase", iteration)


def _latest_checkpoint(out_dir: Path) -> Path | None:
    """Most advanced snapshot by (phase order, final flag, iteration)."""
    from .checkpoint import inspect_checkpoint

    best, best_key = None, None
    for path in sorted(out_dir.glob(f"ckpt_*{CKPT_SUFFIX}")):
        header = inspect_checkpoint(path)
        phase = header["phase"]
        if phase not in PHASES:
            continue
        key = (PHASES.index(phase), int(header["iteration"]))
        if best_key is None or key > best_key:
            best, best_key = path, key
    return best


def _resume_position(header: dict, cfg: RunConfig):
    """(phase, next iteration) to continue from, or None when complete."""
    plan = {"teacher": cfg.teacher_iters, "reinforce": cfg.reinforce_iters}
    phase, done = header["phase"], int(header["iteration"])
    if done < plan[phase]:
        return phase, done
    if phase == "teacher":
        return "reinforce", 0
    return None


def train(cfg: RunConfig, out_dir, resume: bool = False,
          progress=None) -> TrainResult:
    """Run both phases, logging one CSV row per iteration.

    ``progress``, when given, is called as ``progress(phase, iteration, row)``
    after every iteration with the row just logged.  With ``resume=True`` the
    newest checkpoint in ``out_dir`` whose config hash matches ``cfg`` is
    loaded and training continues from it (see module docstring for what a
    restart does and does not replay).
    """
    t_start = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    env = VecEnv(cfg, cfg.role, seeds[0])
    net_rng = np.random.default_rng(seeds[1])
    loop_rng = np.random.default_rng(seeds[2])
    bundle = build_bundle(cfg.role, cfg.dims, net_rng)
    opts = PpoOptimizers(bundle, cfg.ppo.lr_init)

    start_phase, start_iter = "teacher", 0
    if resume:
        latest = _latest_checkpoint(out_dir)
        if latest is None:
            raise CheckpointError(f"resume requested but {out_dir} holds no "
                                  f"*{CKPT_SUFFIX} snapshots")
        bundle, opts, header = load_checkpoint(
            latest, expected_role=cfg.role, expected_config_hash=chash)
        position = _resume_position(header, cfg)
        if position is None:
            start_phase, start_iter = None, 0
        else:
            start_phase, start_iter = position

    (out_dir / CONFIG_YAML).write_text(config_manifest(cfg))
    csv_path = out_dir / LOG_CSV
    fresh_log = not (resume and csv_path.exists())
    log = csv_path.open("w" if fresh_log else "a")
    if fresh_log:
        log.write(",".join(CSV_COLUMNS) + "\n")

    plan = [("teacher", cfg.teacher_iters), ("reinforce", cfg.reinforce_iters)]
    iterations = {phase: 0 for phase, _ in plan}
    final_ckpts: dict = {}
    try:
        ob = env.reset_all()
        for phase, n_iters in plan:
            if start_phase is None or (phase == "teacher"
                                       and start_phase == "reinforce"):
                iterations[phase] = n_iters
                final_ckpts[phase] = out_dir / checkpoint_name(phase)
                continue
            first = start_iter if phase == start_phase else 0
            ep_frozen = (bundle.e_p.to_flat().copy()
                         if phase == "reinforce" else None)
            for it in range(first, n_iters):
                buf = _new_buffer(cfg)
                ob, agg = _collect(env, bundle, cfg, phase, ob, buf, loop_rng)
                compute_gae(buf, cfg.ppo)
                stats = ppo_update(bundle, opts, buf, cfg.ppo, phase,
                                   loop_rng)
                sup = _supervised_update(bundle, opts, cfg, phase, buf,
                                         loop_rng)
                if ep_frozen is not None and not np.array_equal(
                        bundle.e_p.to_flat(), ep_frozen):
                    raise ContractViolation(
                        "privileged encoder drifted during 'reinforce'")
                completed = it + 1
                row = {
                    "phase": phase, "iteration": completed, "lr": stats.lr,
                    "surrogate": stats.surrogate,
                    "value_loss": stats.value_loss,
                    "entropy": stats.entropy, "kl": stats.kl,
                    "clip_frac": stats.clip_frac,
                    "step_reward": agg["step_reward"],
                    **_episode_fields(agg["episodes"]),
                    **sup,
                    "mean_level": agg["mean_level"],
                    "diverged": agg["diverged"],
                }
                for name in TERM_NAMES:
                    row[f"rew_{name}"] = agg["terms"][name]
                _require_finite(row, phase, completed)
                log.write(_format_row(row) + "\n")
                log.flush()
                iterations[phase] = completed
                if progress is not None:
                    progress(phase, completed, row)
                if (completed % cfg.checkpoint_every == 0
                        and completed < n_iters):
                    save_checkpoint(out_dir / checkpoint_name(phase,
                                                              completed),
                                    bundle, opts, phase=phase,
                                    iteration=completed, seed=cfg.seed,
                                    config_hash=chash)
            final = out_dir / checkpoint_name(phase)
            save_checkpoint(final, bundle, opts, phase=phase,
                            iteration=n_iters, seed=cfg.seed,
                            config_hash=chash)
            final_ckpts[phase] = final
            iterations[phase] = n_iters
    finally:
        log.close()

    wall = time.monotonic() - t_start
    manifest = {
        "format": 1,
        "config_file": CONFIG_YAML,
        "config_hash": chash,
        "seed": cfg.seed,
        "role": cfg.role,
        "preset": cfg.preset,
        "phases": {phase: n for phase, n in plan},
        "checkpoints": sorted(p.name for p in
                              out_dir.glob(f"ckpt_*{CKPT_SUFFIX}")),
        "log_csv": LOG_CSV,
        "wall_clock_s": wall,
    }
    manifest_path = out_dir / MANIFEST_JSON
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return TrainResult(out_dir=out_dir, csv_path=csv_path,
                       manifest_path=manifest_path,
                       final_checkpoints=final_ckpts, iterations=iterations,
                       bundle=bundle, wall_clock_s=wall)
