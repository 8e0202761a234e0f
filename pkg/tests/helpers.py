"""Shared test oracles: finite differences and brute-force references."""

from __future__ import annotations

import numpy as np


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, 1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom))


def fill_buffer(bundle, t, n, rng, phase="teacher", done_rate=0.05):
    """Rollout buffer of random transitions, self-consistent with the policy.

    Actions are drawn from the bundle's current gaussian so stored log-probs
    and means describe the pre-update policy exactly.
    """
    from quadload.policy import LOAD_DIM
    from quadload.ppo import RolloutBuffer

    d = bundle.dims
    buf = RolloutBuffer(t, n, d.obs_dim, d.state_dim, d.priv_dim,
                        d.history_dim, d.n_actions, load_dim=LOAD_DIM)
    buf.old_log_std = bundle.head.log_std.copy()
    for _ in range(t):
        obs = rng.standard_normal((n, d.obs_dim))
        state = rng.standard_normal((n, d.state_dim))
        priv = rng.standard_normal((n, d.priv_dim))
        load = rng.standard_normal((n, LOAD_DIM))
        hist = rng.standard_normal((n, d.history_dim))
        if phase == "teacher":
            z, _ = bundle.encode_privileged(state, priv)
        else:
            z, _ = bundle.encode_history(hist)
        src = bundle.flags.actor_load_source
        if src == "none":
            a_load = None
        elif src == "truth":
            a_load = load
        else:
            a_load, _ = bundle.estimate_load(hist)
        a, logp, mu = bundle.act(obs, z, a_load, rng)
        c_load = load if bundle.flags.load_in_critic else None
        v = bundle.evaluate_value(state, priv, c_load, z)
        buf.add(obs=obs, state=state, priv=priv, load=load, hist=hist,
                actions=a, mu=mu, logp=logp, values=v,
                rewards=rng.standard_normal(n),
                dones=(rng.random(n) < done_rate).astype(float))
    buf.bootstrap = rng.standard_normal(n) * 0.1
    return buf


def brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Advantages by the literal double sum over future TD residuals.

    A_t = sum_{k>=t} (gamma*lam)^(k-t) * delta_k, with the product of
    (1-done) masks cutting the sum at episode boundaries.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    next_values = np.concatenate([values[1:], np.asarray(bootstrap)[None]], axis=0)
    deltas = rewards + gamma * next_values * (1.0 - dones) - values
    adv = np.zeros_like(rewards)
    for t in range(T):
        coeff = 1.0
        acc = np.zeros_like(deltas[0])
        for k in range(t, T):
            acc = acc + coeff * deltas[k]
            coeff = coeff * gamma * lam * (1.0 - dones[k])
            if np.all(coeff == 0.0):
                break
        adv[t] = acc
    return adv
