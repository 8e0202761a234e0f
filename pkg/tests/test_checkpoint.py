"""Checkpoint format: lossless round-trips, checksums, role verification."""

import json
import struct
import zlib

import numpy as np
import pytest

from quadload.checkpoint import (MAGIC, checkpoint_hash, inspect_checkpoint,
                                 load_checkpoint, save_checkpoint)
from quadload.errors import CheckpointError, RoleMismatchError
from quadload.policy import NetDims, build_bundle
from quadload.ppo import PpoOptimizers

DIMS = NetDims(obs_dim=4, state_dim=5, priv_dim=3, latent_dim=3,
               history_len=1, n_actions=2,
               encoder_hidden=(8,), estimator_hidden=(8,),
               actor_hidden=(8,), critic_hidden=(8,))


def _bundle_with_state(role="ours", seed=0):
    rng = np.random.default_rng(seed)
    bundle = build_bundle(role, DIMS, rng)
    opts = PpoOptimizers(bundle, lr=3.3e-4)
    for name, net in bundle.nets().items():
        grads = [rng.normal(size=p.shape) for p in net.params]
        opts.step(name, net.params, grads)
    opts.step("log_std", [bundle.head.log_std],
              [rng.normal(size=bundle.head.log_std.shape)])
    return bundle, opts


def test_round_trip_is_bitwise(tmp_path):
    bundle, opts = _bundle_with_state()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, bundle, opts, phase="teacher", iteration=42,
                    seed=7, config_hash="abc123")
    loaded, lopts, header = load_checkpoint(path)
    for name, net in bundle.nets().items():
        assert np.array_equal(loaded.nets()[name].to_flat(), net.to_flat())
    assert np.array_equal(loaded.head.log_std, bundle.head.log_std)
    assert lopts.lr == opts.lr
    for name, adam in opts.opts.items():
        got = lopts.opts[name].state_arrays()
        want = adam.state_arrays()
        for key in ("m", "v", "t"):
            assert np.array_equal(got[key], want[key]), (name, key)
    assert header["iteration"] == 42 and header["seed"] == 7
    assert header["phase"] == "teacher" and header["config_hash"] == "abc123"


def test_save_is_deterministic(tmp_path):
    b1, o1 = _bundle_with_state(seed=5)
    b2, o2 = _bundle_with_state(seed=5)
    p1, p2 = tmp_path / "x.ckpt", tmp_path / "y.ckpt"
    save_checkpoint(p1, b1, o1, phase="reinforce", iteration=1, seed=5,
                    config_hash="h")
    save_checkpoint(p2, b2, o2, phase="reinforce", iteration=1, seed=5,
                    config_hash="h")
    assert checkpoint_hash(p1) == checkpoint_hash(p2)


def test_optional_optimizer(tmp_path):
    bundle, opts = _bundle_with_state()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, bundle, opts, phase="teacher", iteration=1, seed=0,
                    config_hash="h")
    _, lopts, _ = load_checkpoint(path, with_optimizer=False)
    assert lopts is None
    bare = tmp_path / "bare.ckpt"
    save_checkpoint(bare, bundle, None, phase="teacher", iteration=1, seed=0,
                    config_hash="h")
    _, lopts, header = load_checkpoint(bare)
    assert lopts is None and header["lr"] is None


def test_corruption_detected(tmp_path):
    bundle, opts = _bundle_with_state()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, bundle, opts, phase="teacher", iteration=1, seed=0,
                    config_hash="h")
    blob = bytearray(path.read_bytes())
    flipped = tmp_path / "flipped.ckpt"
    blob[len(blob) // 2] ^= 0xFF
    flipped.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(flipped)
    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)
    notckpt = tmp_path / "not.ckpt"
    notckpt.write_bytes(b"PNG....definitely not")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(notckpt)


def test_role_and_config_guards(tmp_path):
    bundle, opts = _bundle_with_state(role="ours")
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, bundle, opts, phase="teacher", iteration=1, seed=0,
                    config_hash="hash-one")
    with pytest.raises(RoleMismatchError, match="oracle"):
        load_checkpoint(path, expected_role="oracle")
    with pytest.raises(CheckpointError, match="config hash"):
        load_checkpoint(path, expected_config_hash="hash-two")
    out = load_checkpoint(path, expected_role="ours",
                          expected_config_hash="hash-one")
    assert out[0].flags.name == "ours"


def test_forged_role_flags_rejected(tmp_path):
    bundle, opts = _bundle_with_state(role="lw")
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, bundle, opts, phase="teacher", iteration=1, seed=0,
                    config_hash="h")
    blob = path.read_bytes()
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(blob[start:start + hlen])
    header["role"]["load_in_critic"] = False   # contradicts the lw definition
    new_header = json.dumps(header, sort_keys=True).encode()
    payload = blob[start + hlen:-4]
    crc = zlib.crc32(new_header + payload) & 0xFFFFFFFF
    forged = tmp_path / "forged.ckpt"
    forged.write_bytes(MAGIC + struct.pack("<Q", len(new_header))
                       + new_header + payload + struct.pack("<I", crc))
    with pytest.raises(RoleMismatchError):
        load_checkpoint(forged)


def test_inspect_summary(tmp_path):
    bundle, opts = _bundle_with_state(role="ours")
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, bundle, opts, phase="reinforce", iteration=9,
                    seed=3, config_hash="h")
    info = inspect_checkpoint(path)
    assert info["role"]["name"] == "ours"
    assert info["phase"] == "reinforce" and info["iteration"] == 9
    assert info["net_params"] == {name: net.spec.n_params
                                  for name, net in bundle.nets().items()}
    assert info["hidden"]["encoder"] == [8]
    assert info["latent_dim"] == 3
