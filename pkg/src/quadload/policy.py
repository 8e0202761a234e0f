"""Policy bundle: encoders, estimator, actor, critic, and role wiring.

Four roles cover the comparison grid:

  nlw     robustness baseline: no load info anywhere, no load reward
  lw      critic sees true load characteristics; actor does not
  oracle  actor additionally receives the true load characteristics
  ours    actor receives the estimate from the concurrently trained
          load estimator; the critic still sees the truth

The privileged encoder E_p maps (full state, dynamics params) onto the
unit sphere; the proprioceptive encoder E_s maps the observation history
to the same latent space and is distilled against E_p.  The estimator E_l
maps the same history to the 4 load characteristics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, RoleMismatchError
from .nets import GaussianHead, Mlp, MlpSpec

ROLES = ("nlw", "lw", "oracle", "ours")
LOAD_DIM = 4


@dataclass(frozen=True)
class RoleFlags:
    name: str
    load_in_critic: bool
    actor_load_source: str   # "none" | "truth" | "estimate"
    load_rewards: bool

    def __post_init__(self):
        if self.name not in ROLES:
            raise ContractViolation(f"unknown role {self.name!r}")
        if self.actor_load_source not in ("none", "truth", "estimate"):
            raise ContractViolation(
                f"bad actor_load_source {self.actor_load_source!r}")
        if self != RoleFlags.from_name(self.name):
            raise RoleMismatchError(
                f"flags {self} do not match the {self.name!r} role definition")

    @classmethod
    def from_name(cls, name: str) -> "RoleFlags":
        table = {
            "nlw": ("none", False, False),
            "lw": ("none", True, True),
            "oracle": ("truth", True, True),
            "ours": ("estimate", True, True),
        }
        if name not in table:
            raise ContractViolation(f"unknown role {name!r}")
        src, critic, rew = table[name]
        obj = object.__new__(cls)
        object.__setattr__(obj, "name", name)
        object.__setattr__(obj, "load_in_critic", critic)
        object.__setattr__(obj, "actor_load_source", src)
        object.__setattr__(obj, "load_rewards", rew)
        return obj

    @property
    def has_estimator(self) -> bool:
        return self.actor_load_source == "estimate"

    def to_dict(self) -> dict:
        return {"name": self.name, "load_in_critic": self.load_in_critic,
                "actor_load_source": self.actor_load_source,
                "load_rewards": self.load_rewards}


@dataclass(frozen=True)
class NetDims:
    """Input/latent layout shared by every network in a bundle."""

    obs_dim: int = 16
    state_dim: int = 36
    priv_dim: int = 15
    latent_dim: int = 16
    history_len: int = 15          # frames beyond the current one
    n_actions: int = 4
    encoder_hidden: tuple = (128, 64, 32)
    estimator_hidden: tuple = (128, 64, 32)
    actor_hidden: tuple = (128, 64, 32)
    critic_hidden: tuple = (128, 64, 32)

    @property
    def history_frames(self) -> int:
        return self.history_len + 1   # o_{t-H..t} inclusive

    @property
    def history_dim(self) -> int:
        return self.history_frames * self.obs_dim

    def actor_in(self, flags: RoleFlags) -> int:
        extra = 0 if flags.actor_load_source == "none" else LOAD_DIM
        return self.obs_dim + self.latent_dim + extra

    def critic_in(self, flags: RoleFlags) -> int:
        extra = LOAD_DIM if flags.load_in_critic else 0
        return self.state_dim + self.priv_dim + extra + self.latent_dim

    def to_dict(self) -> dict:
        return {
            "obs_dim": self.obs_dim, "state_dim": self.state_dim,
            "priv_dim": self.priv_dim, "latent_dim": self.latent_dim,
            "history_len": self.history_len, "n_actions": self.n_actions,
            "encoder_hidden": list(self.encoder_hidden),
            "estimator_hidden": list(self.estimator_hidden),
            "actor_hidden": list(self.actor_hidden),
            "critic_hidden": list(self.critic_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetDims":
        kw = dict(d)
        for key in ("encoder_hidden", "estimator_hidden",
                    "actor_hidden", "critic_hidden"):
            kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass
class PolicyBundle:
    flags: RoleFlags
    dims: NetDims
    e_p: Mlp                 # privileged encoder, unit-sphere output
    e_s: Mlp                 # proprioceptive encoder, unit-sphere output
    actor: Mlp
    critic: Mlp
    head: GaussianHead
    e_l: Mlp | None = None   # load estimator (ours only)

    def nets(self) -> dict[str, Mlp]:
        out = {"e_p": self.e_p, "e_s": self.e_s,
               "actor": self.actor, "critic": self.critic}
        if self.e_l is not None:
            out["e_l"] = self.e_l
        return out

    # --- encoders ---------------------------------------------------------
    def encode_privileged(self, state: np.ndarray, priv: np.ndarray):
        return self.e_p.forward(np.concatenate([state, priv], axis=-1))

    def encode_history(self, hist: np.ndarray):
        return self.e_s.forward(hist)

    def estimate_load(self, hist: np.ndarray):
        if self.e_l is None:
            raise ContractViolation(
                f"role {self.flags.name!r} has no load estimator")
        return self.e_l.forward(hist)

    # --- heads ------------------------------------------------------------
    def actor_input(self, obs: np.ndarray, z: np.ndarray,
                    load: np.ndarray | None) -> np.ndarray:
        if self.flags.actor_load_source == "none":
            if load is not None:
                raise ContractViolation(
                    f"role {self.flags.name!r} takes no load input to the actor")
            return np.concatenate([obs, z], axis=-1)
        if load is None:
            raise ContractViolation(
                f"role {self.flags.name!r} requires a load input to the actor")
        return np.concatenate([obs, z, load], axis=-1)

    def act(self, obs: np.ndarray, z: np.ndarray, load: np.ndarray | None,
            rng: np.random.Generator | None = None):
        """Action mean (and a sample + its log prob when rng is given)."""
        mu, _ = self.actor.forward(self.actor_input(obs, z, load))
        if rng is None:
            return mu, None, mu
        a = self.head.sample(mu, rng)
        return a, self.head.log_prob(mu, a), mu

    def critic_input(self, state: np.ndarray, priv: np.ndarray,
                     load: np.ndarray | None, z: np.ndarray) -> np.ndarray:
        if self.flags.load_in_critic:
            if load is None:
                raise ContractViolation(
                    f"role {self.flags.name!r} critic needs load characteristics")
            return np.concatenate([state, priv, load, z], axis=-1)
        if load is not None:
            raise ContractViolation(
                f"role {self.flags.name!r} critic takes no load input")
        return np.concatenate([state, priv, z], axis=-1)

    def evaluate_value(self, state, priv, load, z) -> np.ndarray:
        v, _ = self.critic.forward(self.critic_input(state, priv, load, z))
        return v[..., 0]

    def validate_shapes(self) -> None:
        d, f = self.dims, self.flags
        checks = [
            (self.e_p.spec.in_dim, d.state_dim + d.priv_dim, "e_p in"),
            (self.e_p.spec.out_dim, d.latent_dim, "e_p out"),
            (self.e_s.spec.in_dim, d.history_dim, "e_s in"),
            (self.e_s.spec.out_dim, d.latent_dim, "e_s out"),
            (self.actor.spec.in_dim, d.actor_in(f), "actor in"),
            (self.actor.spec.out_dim, d.n_actions, "actor out"),
            (self.critic.spec.in_dim, d.critic_in(f), "critic in"),
            (self.critic.spec.out_dim, 1, "critic out"),
        ]
        if f.has_estimator:
            if self.e_l is None:
                raise ContractViolation("role 'ours' requires a load estimator")
            checks += [(self.e_l.spec.in_dim, d.history_dim, "e_l in"),
                       (self.e_l.spec.out_dim, LOAD_DIM, "e_l out")]
        elif self.e_l is not None:
            raise ContractViolation(
                f"role {f.name!r} must not carry a load estimator")
        if not (self.e_p.spec.unit_norm and self.e_s.spec.unit_norm):
            raise ContractViolation("both encoders must be unit-norm")
        for got, want, what in checks:
            if got != want:
                raise ContractViolation(f"{what}: {got} != {want}")


def build_bundle(role: str | RoleFlags, dims: NetDims,
                 rng: np.random.Generator, init_std: float = 1.0) -> PolicyBundle:
    flags = RoleFlags.from_name(role) if isinstance(role, str) else role
    e_p = Mlp(MlpSpec(dims.state_dim + dims.priv_dim, dims.encoder_hidden,
                      dims.latent_dim, unit_norm=True), rng=rng)
    e_s = Mlp(MlpSpec(dims.history_dim, dims.encoder_hidden,
                      dims.latent_dim, unit_norm=True), rng=rng)
    actor = Mlp(MlpSpec(dims.actor_in(flags), dims.actor_hidden,
                        dims.n_actions, out_gain=0.01), rng=rng)
    critic = Mlp(MlpSpec(dims.critic_in(flags), dims.critic_hidden, 1), rng=rng)
    e_l = None
    if flags.has_estimator:
        e_l = Mlp(MlpSpec(dims.history_dim, dims.estimator_hidden, LOAD_DIM),
                  rng=rng)
    bundle = PolicyBundle(flags=flags, dims=dims, e_p=e_p, e_s=e_s,
                          actor=actor, critic=critic,
                          head=GaussianHead.create(dims.n_actions, init_std),
                          e_l=e_l)
    bundle.validate_shapes()
    return bundle
