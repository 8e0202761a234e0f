"""Role wiring: who sees the load where, and shape contracts."""

import numpy as np
import pytest

from quadload.errors import ContractViolation, RoleMismatchError
from quadload.nets import Mlp, MlpSpec
from quadload.policy import (LOAD_DIM, ROLES, NetDims, PolicyBundle,
                             RoleFlags, build_bundle)

DIMS = NetDims(obs_dim=5, state_dim=7, priv_dim=3, latent_dim=4,
               history_len=2, n_actions=4,
               encoder_hidden=(16,), estimator_hidden=(16,),
               actor_hidden=(16,), critic_hidden=(16,))


def test_role_table():
    expected = {
        "nlw": (False, "none", False),
        "lw": (True, "none", True),
        "oracle": (True, "truth", True),
        "ours": (True, "estimate", True),
    }
    assert set(ROLES) == set(expected)
    for name, (critic, src, rew) in expected.items():
        f = RoleFlags.from_name(name)
        assert f.load_in_critic is critic
        assert f.actor_load_source == src
        assert f.load_rewards is rew
        assert f.has_estimator is (src == "estimate")


def test_inconsistent_flags_rejected():
    with pytest.raises(RoleMismatchError):
        RoleFlags("nlw", load_in_critic=True, actor_load_source="none",
                  load_rewards=False)
    with pytest.raises(RoleMismatchError):
        RoleFlags("oracle", load_in_critic=True, actor_load_source="estimate",
                  load_rewards=True)
    with pytest.raises(ContractViolation):
        RoleFlags.from_name("teacher")


def test_bundle_construction_per_role():
    rng = np.random.default_rng(0)
    for role in ROLES:
        b = build_bundle(role, DIMS, rng)
        b.validate_shapes()
        assert (b.e_l is not None) is (role == "ours")
        extra = 0 if role in ("nlw", "lw") else LOAD_DIM
        assert b.actor.spec.in_dim == DIMS.obs_dim + DIMS.latent_dim + extra
        c_extra = 0 if role == "nlw" else LOAD_DIM
        assert b.critic.spec.in_dim == \
            DIMS.state_dim + DIMS.priv_dim + c_extra + DIMS.latent_dim


def test_latents_live_on_unit_sphere():
    rng = np.random.default_rng(1)
    b = build_bundle("ours", DIMS, rng)
    state = rng.standard_normal((32, DIMS.state_dim))
    priv = rng.standard_normal((32, DIMS.priv_dim))
    hist = rng.standard_normal((32, DIMS.history_dim))
    z_p, _ = b.encode_privileged(state, priv)
    z_s, _ = b.encode_history(hist)
    assert np.allclose(np.linalg.norm(z_p, axis=-1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(z_s, axis=-1), 1.0, atol=1e-12)


def test_actor_input_guards():
    rng = np.random.default_rng(2)
    obs = rng.standard_normal((3, DIMS.obs_dim))
    z = rng.standard_normal((3, DIMS.latent_dim))
    load = rng.standard_normal((3, LOAD_DIM))
    nlw = build_bundle("nlw", DIMS, rng)
    oracle = build_bundle("oracle", DIMS, rng)
    with pytest.raises(ContractViolation):
        nlw.actor_input(obs, z, load)
    with pytest.raises(ContractViolation):
        oracle.actor_input(obs, z, None)
    assert nlw.actor_input(obs, z, None).shape == (3, DIMS.actor_in(nlw.flags))
    got = oracle.actor_input(obs, z, load)
    assert np.array_equal(got[:, -LOAD_DIM:], load)


def test_critic_input_guards():
    rng = np.random.default_rng(3)
    state = rng.standard_normal((3, DIMS.state_dim))
    priv = rng.standard_normal((3, DIMS.priv_dim))
    z = rng.standard_normal((3, DIMS.latent_dim))
    load = rng.standard_normal((3, LOAD_DIM))
    nlw = build_bundle("nlw", DIMS, rng)
    lw = build_bundle("lw", DIMS, rng)
    with pytest.raises(ContractViolation):
        nlw.critic_input(state, priv, load, z)
    with pytest.raises(ContractViolation):
        lw.critic_input(state, priv, None, z)
    got = lw.critic_input(state, priv, load, z)
    assert np.array_equal(got[:, -DIMS.latent_dim:], z)
    assert np.array_equal(got[:, -DIMS.latent_dim - LOAD_DIM:-DIMS.latent_dim],
                          load)


def test_estimator_only_for_ours():
    rng = np.random.default_rng(4)
    hist = rng.standard_normal((2, DIMS.history_dim))
    ours = build_bundle("ours", DIMS, rng)
    l_hat, _ = ours.estimate_load(hist)
    assert l_hat.shape == (2, LOAD_DIM)
    for role in ("nlw", "lw", "oracle"):
        with pytest.raises(ContractViolation):
            build_bundle(role, DIMS, rng).estimate_load(hist)


def test_act_modes():
    rng = np.random.default_rng(5)
    b = build_bundle("nlw", DIMS, rng)
    obs = rng.standard_normal((6, DIMS.obs_dim))
    z = rng.standard_normal((6, DIMS.latent_dim))
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    mu, logp, mu2 = b.act(obs, z, None, rng=None)
    assert logp is None and np.array_equal(mu, mu2)
    a, logp, mu3 = b.act(obs, z, None, rng=np.random.default_rng(9))
    assert np.array_equal(mu, mu3)
    assert np.allclose(logp, b.head.log_prob(mu3, a))


def test_validate_shapes_catches_misbuilds():
    rng = np.random.default_rng(6)
    b = build_bundle("lw", DIMS, rng)
    bad_actor = Mlp(MlpSpec(DIMS.actor_in(b.flags) + 1, (8,), DIMS.n_actions),
                    rng=rng)
    broken = PolicyBundle(flags=b.flags, dims=b.dims, e_p=b.e_p, e_s=b.e_s,
                          actor=bad_actor, critic=b.critic, head=b.head)
    with pytest.raises(ContractViolation):
        broken.validate_shapes()
    stray = PolicyBundle(flags=b.flags, dims=b.dims, e_p=b.e_p, e_s=b.e_s,
                         actor=b.actor, critic=b.critic, head=b.head,
                         e_l=Mlp(MlpSpec(DIMS.history_dim, (8,), LOAD_DIM),
                                 rng=rng))
    with pytest.raises(ContractViolation):
        stray.validate_shapes()


def test_dims_round_trip():
    d = NetDims.from_dict(DIMS.to_dict())
    assert d == DIMS
    assert DIMS.history_dim == DIMS.obs_dim * (DIMS.history_len + 1)
