"""Supervised losses tying the student networks to their targets.

Reconstruction pulls the proprioceptive latent z^s onto the privileged
latent z (both unit-norm); estimation pulls the load estimate onto the true
load characteristics under a per-component weight vector.  Both are plain
mean-squared objectives; gradients are returned for the hand-rolled nets.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def _require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"{what}: shapes {a.shape} != {b.shape}")


def reconstruction_loss(z_s: np.ndarray,
                        z: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over samples of ||z^s - z||^2, and d(loss)/d(z^s)."""
    z_s = np.atleast_2d(np.asarray(z_s, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    _require_same_shape(z_s, z, "reconstruction targets")
    diff = z_s - z
    loss = float(np.mean(np.sum(diff * diff, axis=-1)))
    grad = 2.0 * diff / z_s.shape[0]
    return loss, grad


def load_estimation_loss(l_hat: np.ndarray, l: np.ndarray,
                         weights) -> tuple[float, np.ndarray]:
    """Mean over samples of ||w * (l_hat - l)||^2, and d(loss)/d(l_hat)."""
    l_hat = np.atleast_2d(np.asarray(l_hat, dtype=np.float64))
    l = np.atleast_2d(np.asarray(l, dtype=np.float64))
    _require_same_shape(l_hat, l, "estimation targets")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (l_hat.shape[-1],):
        raise ContractViolation(
            f"weight vector {w.shape} does not match load dim {l_hat.shape[-1]}")
    diff = w * (l_hat - l)
    loss = float(np.mean(np.sum(diff * diff, axis=-1)))
    grad = 2.0 * w * diff / l_hat.shape[0]
    return loss, grad
