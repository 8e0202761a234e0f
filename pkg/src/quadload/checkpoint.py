"""Versioned binary checkpoints for a policy bundle plus optimizer state.

Layout (little-endian):

    bytes 0..7    magic  b"QLCKPT01"
    bytes 8..15   uint64 header length in bytes
    header        UTF-8 JSON: format version, role flags, net dims, phase,
                  iteration, seed, config hash, optimizer lr, and an array
                  manifest [{name, shape}] in storage order
    payload       the manifest's arrays, float64, concatenated
    tail          uint32 CRC-32 over header + payload

The array manifest always covers every network's flat parameters, the
gaussian log-std, and (when saved with an optimizer) each Adam's m/v/t.
Round-trips are bitwise lossless; any corruption trips the checksum.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib

import numpy as np

from .errors import CheckpointError, RoleMismatchError
from .policy import NetDims, PolicyBundle, RoleFlags, build_bundle
from .ppo import PpoOptimizers

MAGIC = b"QLCKPT01"
FORMAT_VERSION = 1


def _ordered_arrays(bundle: PolicyBundle,
                    opts: PpoOptimizers | None) -> list[tuple[str, np.ndarray]]:
    out = [(f"net/{name}", net.to_flat())
           for name, net in sorted(bundle.nets().items())]
    out.append(("head/log_std", bundle.head.log_std))
    if opts is not None:
        for name in sorted(opts.opts):
            state = opts.opts[name].state_arrays()
            for key in ("m", "v", "t"):
                out.append((f"adam/{name}/{key}", state[key]))
    return out


def save_checkpoint(path, bundle: PolicyBundle, opts: PpoOptimizers | None,
                    *, phase: str, iteration: int, seed: int,
                    config_hash: str) -> None:
    arrays = _ordered_arrays(bundle, opts)
    header = {
        "format_version": FORMAT_VERSION,
        "role": bundle.flags.to_dict(),
        "dims": bundle.dims.to_dict(),
        "phase": phase,
        "iteration": int(iteration),
        "seed": int(seed),
        "config_hash": config_hash,
        "lr": None if opts is None else float(opts.lr),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for _, a in arrays)
    crc = zlib.crc32(header_bytes + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def _read_raw(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(blob) < len(MAGIC) + 12 or not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    body_start = len(MAGIC) + 8
    if len(blob) < body_start + hlen + 4:
        raise CheckpointError(f"{path}: truncated header")
    header_bytes = blob[body_start:body_start + hlen]
    payload = blob[body_start + hlen:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(header_bytes + payload) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt file)")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} "
            f"!= {FORMAT_VERSION}")
    arrays: dict[str, np.ndarray] = {}
    ofs = 0
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = n * 8
        if ofs + nbytes > len(payload):
            raise CheckpointError(f"{path}: payload shorter than manifest")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f8", count=n, offset=ofs
        ).reshape(entry["shape"]).copy()
        ofs += nbytes
    if ofs != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - ofs} stray payload bytes")
    return header, arrays


def load_checkpoint(path, expected_role: str | None = None,
                    expected_config_hash: str | None = None,
                    with_optimizer: bool = True):
    """Rebuild (bundle, optimizers | None, header) from a checkpoint file."""
    header, arrays = _read_raw(path)
    flags = RoleFlags.from_name(header["role"]["name"])
    if flags.to_dict() != header["role"]:
        raise RoleMismatchError(
            f"{path}: stored flags {header['role']} do not match the "
            f"{flags.name!r} role definition")
    if expected_role is not None and flags.name != expected_role:
        raise RoleMismatchError(
            f"{path}: checkpoint role {flags.name!r}, expected {expected_role!r}")
    if expected_config_hash is not None \
            and header["config_hash"] != expected_config_hash:
        raise CheckpointError(
            f"{path}: config hash {header['config_hash'][:12]}... does not "
            f"match the requested run {expected_config_hash[:12]}...")
    dims = NetDims.from_dict(header["dims"])
    bundle = build_bundle(flags, dims, np.random.default_rng(0))
    for name, net in bundle.nets().items():
        key = f"net/{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing array {key!r}")
        net.load_flat(arrays[key])
    bundle.head.log_std[:] = arrays["head/log_std"]
    bundle.validate_shapes()

    opts = None
    if with_optimizer and header["lr"] is not None:
        opts = PpoOptimizers(bundle, lr=float(header["lr"]))
        for name, adam in opts.opts.items():
            try:
                adam.load_state_arrays({k: arrays[f"adam/{name}/{k}"]
                                        for k in ("m", "v", "t")})
            except KeyError as exc:
                raise CheckpointError(
                    f"{path}: missing optimizer state {exc}") from exc
    return bundle, opts, header


def checkpoint_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def inspect_checkpoint(path) -> dict:
    """Header summary plus per-network parameter counts (no rebuild)."""
    header, arrays = _read_raw(path)
    nets = {name.split("/", 1)[1]: int(arr.size)
            for name, arr in arrays.items() if name.startswith("net/")}
    dims = NetDims.from_dict(header["dims"])
    return {
        "role": header["role"],
        "phase": header["phase"],
        "iteration": header["iteration"],
        "seed": header["seed"],
        "config_hash": header["config_hash"],
        "lr": header["lr"],
        "net_params": nets,
        "hidden": {
            "encoder": list(dims.encoder_hidden),
            "estimator": list(dims.estimator_hidden),
            "actor": list(dims.actor_hidden),
            "critic": list(dims.critic_hidden),
        },
        "latent_dim": dims.latent_dim,
    }
