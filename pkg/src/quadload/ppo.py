"""Clipped-surrogate PPO over hand-rolled numpy networks.

The update owns three trainable heads per phase:

  teacher    z = E_p(s, p); gradients reach actor, critic, E_p
  reinforce  z = E_s(history); gradients reach actor, critic, E_s
             (E_p is not touched; the estimator only ever trains on its
             supervised loss, never on PPO gradients)

Advantages use GAE(lambda) with done masking and a bootstrap value for the
final step.  The learning rate adapts to the measured KL between the pre-
and post-update policies: above twice the target it shrinks by 1.5x, below
half the target it grows by 1.5x, clamped to [lr_min, lr_max].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DivergenceError
from .nets import Adam, GaussianHead
from .policy import PolicyBundle

PHASES = ("teacher", "reinforce")


@dataclass(frozen=True)
class PpoConfig:
    clip_range: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    desired_kl: float = 0.01
    epochs: int = 5
    minibatches: int = 4
    value_coef: float = 1.0
    lr_init: float = 1.0e-3
    lr_min: float = 1.0e-6
    lr_max: float = 1.0e-2
    steps_per_iter: int = 24
    # reinforce phase: critic latent from the student ("student") or the
    # frozen privileged encoder ("teacher")
    reinforce_critic_latent: str = "student"

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ContractViolation("gamma in (0,1], lambda in [0,1] required")
        if self.minibatches < 1 or self.epochs < 1:
            raise ContractViolation("need at least one epoch and minibatch")
        if self.reinforce_critic_latent not in ("student", "teacher"):
            raise ContractViolation(
                "reinforce_critic_latent must be 'student' or 'teacher'")


def adaptive_lr(lr: float, kl: float, cfg: PpoConfig) -> float:
    if kl > 2.0 * cfg.desired_kl:
        lr = lr / 1.5
    elif kl < cfg.desired_kl / 2.0:
        lr = lr * 1.5
    return float(np.clip(lr, cfg.lr_min, cfg.lr_max))


def minibatch_indices(n: int, k: int,
                      rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle 0..n-1 and split into k near-equal chunks covering every index."""
    if k > n:
        raise ContractViolation(f"cannot split {n} samples into {k} minibatches")
    return np.array_split(rng.permutation(n), k)


@dataclass(frozen=True)
class MiniBatch:
    obs: np.ndarray
    state: np.ndarray
    priv: np.ndarray
    load: np.ndarray
    hist: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    adv: np.ndarray
    rets: np.ndarray

    @property
    def size(self) -> int:
        return self.obs.shape[0]


class RolloutBuffer:
    """Fixed-size (T, N, ...) storage filled by the collector."""

    def __init__(self, t: int, n: int, obs_dim: int, state_dim: int,
                 priv_dim: int, hist_dim: int, n_actions: int,
                 load_dim: int = 4):
        if t < 1 or n < 1:
            raise ContractViolation("buffer needs t >= 1, n >= 1")
        self.t, self.n = t, n
        shape = (t, n)
        self.obs = np.zeros(shape + (obs_dim,))
        self.state = np.zeros(shape + (state_dim,))
        self.priv = np.zeros(shape + (priv_dim,))
        self.load = np.zeros(shape + (load_dim,))
        self.hist = np.zeros(shape + (hist_dim,))
        self.actions = np.zeros(shape + (n_actions,))
        self.mu = np.zeros(shape + (n_actions,))
        self.logp = np.zeros(shape)
        self.rewards = np.zeros(shape)
        self.dones = np.zeros(shape)
        self.values = np.zeros(shape)
        self.bootstrap = np.zeros(n)
        self.old_log_std = np.zeros(n_actions)
        self.advantages = np.zeros(shape)
        self.returns = np.zeros(shape)
        self.filled = 0

    def add(self, **kw) -> None:
        if self.filled >= self.t:
            raise ContractViolation("rollout buffer is full")
        for name, value in kw.items():
            getattr(self, name)[self.filled] = value
        self.filled += 1

    def require_full(self) -> None:
        if self.filled != self.t:
            raise ContractViolation(
                f"buffer has {self.filled}/{self.t} steps")

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape(self.t * self.n, *arr.shape[2:])

    def minibatch(self, idx: np.ndarray) -> MiniBatch:
        return MiniBatch(
            obs=self.flat("obs")[idx], state=self.flat("state")[idx],
            priv=self.flat("priv")[idx], load=self.flat("load")[idx],
            hist=self.flat("hist")[idx], actions=self.flat("actions")[idx],
            old_logp=self.flat("logp")[idx], adv=self.flat("advantages")[idx],
            rets=self.flat("returns")[idx])


def compute_gae(buf: RolloutBuffer, cfg: PpoConfig,
                normalize: bool = True) -> None:
    """Fill buf.advantages/returns by the reverse GAE recursion."""
    buf.require_full()
    adv = np.zeros((buf.t, buf.n))
    last = np.zeros(buf.n)
    for t in reversed(range(buf.t)):
        not_done = 1.0 - buf.dones[t]
        next_v = buf.values[t + 1] if t + 1 < buf.t else buf.bootstrap
        delta = buf.rewards[t] + cfg.gamma * next_v * not_done - buf.values[t]
        last = delta + cfg.gamma * cfg.gae_lambda * not_done * last
        adv[t] = last
    buf.returns = adv + buf.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1.0e-8)
    buf.advantages = adv


@dataclass
class TrainStats:
    surrogate: float
    value_loss: float
    entropy: float
    kl: float
    clip_frac: float
    lr: float


class PpoOptimizers:
    """One Adam per network plus one for the gaussian log-std."""

    def __init__(self, bundle: PolicyBundle, lr: float):
        self.lr = lr
        self.opts = {name: Adam.for_params(net.params, lr=lr)
                     for name, net in bundle.nets().items()}
        self.opts["log_std"] = Adam.for_params([bundle.head.log_std], lr=lr)

    def step(self, name: str, params, grads) -> None:
        self.opts[name].step(params, grads, lr=self.lr)


def _policy_latent(bundle: PolicyBundle, phase: str, state, priv, hist):
    if phase == "teacher":
        return bundle.encode_privileged(state, priv)
    return bundle.encode_history(hist)


def _actor_load(bundle: PolicyBundle, load, hist):
    src = bundle.flags.actor_load_source
    if src == "none":
        return None
    if src == "truth":
        return load
    l_hat, _ = bundle.estimate_load(hist)   # no PPO gradient into E_l
    return l_hat


def loss_and_grads(bundle: PolicyBundle, cfg: PpoConfig, phase: str,
                   mb: MiniBatch) -> tuple[dict, dict]:
    """One minibatch of the PPO loss, analytically differentiated.

    Loss = surrogate + value_coef * value_loss - entropy_coef * entropy.
    Returns (stats, grads) without touching any parameter; grads carry keys
    "actor", "critic", the phase encoder ("e_p"/"e_s"), and "log_std".
    """
    if phase not in PHASES:
        raise ContractViolation(f"unknown phase {phase!r}")
    head = bundle.head
    eps = cfg.clip_range
    b = mb.size

    z, z_cache = _policy_latent(bundle, phase, mb.state, mb.priv, mb.hist)
    # option: in the reinforce phase the critic may keep reading the frozen
    # privileged encoder instead of the student latent
    split_critic = (phase == "reinforce"
                    and cfg.reinforce_critic_latent == "teacher")
    z_critic = bundle.encode_privileged(mb.state, mb.priv)[0] \
        if split_critic else z
    actor_in = bundle.actor_input(mb.obs, z, _actor_load(bundle, mb.load,
                                                         mb.hist))
    mu, pi_cache = bundle.actor.forward(actor_in)
    logp = head.log_prob(mu, mb.actions)
    ratio = np.exp(logp - mb.old_logp)
    unclipped = ratio * mb.adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * mb.adv
    surrogate = -float(np.mean(np.minimum(unclipped, clipped)))
    # min() picks the unclipped branch wherever it is <= the clipped one;
    # the clipped branch is constant in the parameters, so no grad there
    take_unclipped = unclipped <= clipped
    d_logp = np.where(take_unclipped, -mb.adv * ratio / b, 0.0)

    c_load = mb.load if bundle.flags.load_in_critic else None
    v, v_cache = bundle.critic.forward(
        bundle.critic_input(mb.state, mb.priv, c_load, z_critic))
    verr = v[:, 0] - mb.rets
    value_loss = float(np.mean(verr ** 2))
    if not (np.isfinite(surrogate) and np.isfinite(value_loss)):
        raise DivergenceError(
            f"non-finite PPO loss in phase {phase!r}: "
            f"surrogate={surrogate}, value={value_loss}", step=0)
    dv = (cfg.value_coef * 2.0 * verr / b)[:, None]

    d_mu_lp, d_ls_lp = head.log_prob_grads(mu, mb.actions)
    d_mu = d_logp[:, None] * d_mu_lp
    d_log_std = (d_logp[:, None] * d_ls_lp).sum(axis=0) - cfg.entropy_coef
    actor_grads, d_actor_in = bundle.actor.backward(pi_cache, d_mu)
    critic_grads, d_critic_in = bundle.critic.backward(v_cache, dv)
    nz = bundle.dims.latent_dim
    dz = d_actor_in[:, bundle.dims.obs_dim:bundle.dims.obs_dim + nz]
    if not split_critic:
        dz = dz + d_critic_in[:, -nz:]
    encoder = bundle.e_p if phase == "teacher" else bundle.e_s
    enc_grads, _ = encoder.backward(z_cache, dz)

    stats = {
        "surrogate": surrogate,
        "value_loss": value_loss,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    grads = {
        "actor": actor_grads,
        "critic": critic_grads,
        ("e_p" if phase == "teacher" else "e_s"): enc_grads,
        "log_std": [d_log_std],
    }
    return stats, grads


def ppo_update(bundle: PolicyBundle, opts: PpoOptimizers, buf: RolloutBuffer,
               cfg: PpoConfig, phase: str,
               rng: np.random.Generator) -> TrainStats:
    """Run cfg.epochs x cfg.minibatches clipped-PPO steps on a full buffer."""
    if phase not in PHASES:
        raise ContractViolation(f"unknown phase {phase!r}")
    buf.require_full()
    enc_name = "e_p" if phase == "teacher" else "e_s"
    encoder = bundle.e_p if phase == "teacher" else bundle.e_s

    surr_acc, vloss_acc, clip_acc, n_batches = 0.0, 0.0, 0.0, 0
    for _ in range(cfg.epochs):
        for idx in minibatch_indices(buf.t * buf.n, cfg.minibatches, rng):
            stats, grads = loss_and_grads(bundle, cfg, phase,
                                          buf.minibatch(idx))
            opts.step("actor", bundle.actor.params, grads["actor"])
            opts.step("critic", bundle.critic.params, grads["critic"])
            opts.step(enc_name, encoder.params, grads[enc_name])
            opts.step("log_std", [bundle.head.log_std], grads["log_std"])
            surr_acc += stats["surrogate"]
            vloss_acc += stats["value_loss"]
            clip_acc += stats["clip_frac"]
            n_batches += 1

    # measured KL over the whole buffer drives the lr for the next update
    state, priv, hist = buf.flat("state"), buf.flat("priv"), buf.flat("hist")
    z_all, _ = _policy_latent(bundle, phase, state, priv, hist)
    mu_all, _ = bundle.actor.forward(
        bundle.actor_input(buf.flat("obs"), z_all,
                           _actor_load(bundle, buf.flat("load"), hist)))
    kl = float(np.mean(GaussianHead.kl(buf.flat("mu"),
                                       np.exp(buf.old_log_std),
                                       mu_all, bundle.head.std)))
    opts.lr = adaptive_lr(opts.lr, kl, cfg)

    return TrainStats(surrogate=surr_acc / n_batches,
                      value_loss=vloss_acc / n_batches,
                      entropy=bundle.head.entropy(), kl=kl,
                      clip_frac=clip_acc / n_batches, lr=opts.lr)
