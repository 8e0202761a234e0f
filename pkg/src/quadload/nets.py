"""Minimal feed-forward network core in numpy.

Everything the trainer needs and nothing more: ELU MLPs with manual
backprop, an optional unit-sphere output layer, orthogonal init, Adam, and
a diagonal-Gaussian action head.  Parameters round-trip losslessly through
a flat float64 vector, which is what the checkpoint format stores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

_NORM_EPS = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    unit_norm: bool = False   # project output onto the unit sphere
    out_gain: float = 1.0     # orthogonal-init gain of the last layer

    def __post_init__(self):
        dims = (self.in_dim, *self.hidden, self.out_dim)
        if any(int(d) <= 0 for d in dims):
            raise ContractViolation(f"non-positive layer dim in {dims}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.in_dim, *self.hidden, self.out_dim)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    """Orthogonal (rows, cols) matrix scaled by gain; sign-fixed for determinism."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    # C layout keeps matmul bitwise identical to checkpoint-loaded copies
    return np.ascontiguousarray(gain * q[:rows, :cols])


def init_params(spec: MlpSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """[W0, b0, W1, b1, ...]; hidden gains sqrt(2), output gain spec.out_gain."""
    params: list[np.ndarray] = []
    dims = spec.layer_dims
    for k, (i, o) in enumerate(dims):
        gain = spec.out_gain if k == len(dims) - 1 else np.sqrt(2.0)
        params.append(orthogonal(rng, i, o, gain))
        params.append(np.zeros(o))
    return params


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # d/dx elu(x) = 1 for x>0, else elu(x)+1
    return np.where(x > 0, 1.0, y + 1.0)


class Mlp:
    """ELU MLP with manual forward/backward.

    forward returns (output, cache); backward consumes the cache and the
    output cotangent and returns (grads, input cotangent).  Grads have the
    same list structure as .params.
    """

    def __init__(self, spec: MlpSpec, params: list[np.ndarray] | None = None,
                 rng: np.random.Generator | None = None):
        self.spec = spec
        if params is None:
            if rng is None:
                raise ContractViolation("Mlp needs params or an rng to init them")
            params = init_params(spec, rng)
        self.params = params
        self._check_shapes()

    def _check_shapes(self):
        dims = self.spec.layer_dims
        if len(self.params) != 2 * len(dims):
            raise ContractViolation("parameter list length mismatch")
        for k, (i, o) in enumerate(dims):
            if self.params[2 * k].shape != (i, o) or self.params[2 * k + 1].shape != (o,):
                raise ContractViolation(
                    f"layer {k} shape mismatch: want ({i},{o}), "
                    f"got {self.params[2 * k].shape}")

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.spec.in_dim:
            raise ContractViolation(
                f"input dim {x.shape[-1]} != spec.in_dim {self.spec.in_dim}")
        acts = [x]
        pre: list[np.ndarray] = []
        n_layers = len(self.spec.layer_dims)
        h = x
        for k in range(n_layers):
            z = h @ self.params[2 * k] + self.params[2 * k + 1]
            pre.append(z)
            h = _elu(z) if k < n_layers - 1 else z
            acts.append(h)
        norms = None
        if self.spec.unit_norm:
            raw = h
            norms = np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), _NORM_EPS)
            h = raw / norms
        cache = (acts, pre, norms, squeeze)
        return (h[0] if squeeze else h), cache

    def backward(self, cache, dy: np.ndarray):
        acts, pre, norms, squeeze = cache
        dy = np.asarray(dy, dtype=np.float64)
        if squeeze:
            dy = dy[None, :]
        if self.spec.unit_norm:
            raw = acts[-1]
            y = raw / norms
            # d(raw/|raw|) pulled back: (dy - y (y.dy)) / |raw|
            dy = (dy - y * np.sum(y * dy, axis=-1, keepdims=True)) / norms
        grads: list[np.ndarray] = [None] * len(self.params)
        n_layers = len(self.spec.layer_dims)
        g = dy
        for k in reversed(range(n_layers)):
            if k < n_layers - 1:
                g = g * _elu_grad(pre[k], acts[k + 1])
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k].T
        return grads, (g[0] if squeeze else g)

    # --- flat (de)serialization -------------------------------------------
    def to_flat(self) -> np.ndarray:
        return params_to_flat(self.params)

    def load_flat(self, flat: np.ndarray) -> None:
        self.params = flat_to_params(self.spec, flat)

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [p.copy() for p in self.params])


def params_to_flat(params: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in params])


def flat_to_params(spec: MlpSpec, flat: np.ndarray) -> list[np.ndarray]:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (spec.n_params,):
        raise ContractViolation(
            f"flat vector has {flat.shape}, spec wants ({spec.n_params},)")
    out: list[np.ndarray] = []
    ofs = 0
    for i, o in spec.layer_dims:
        out.append(flat[ofs:ofs + i * o].reshape(i, o).copy())
        ofs += i * o
        out.append(flat[ofs:ofs + o].copy())
        ofs += o
    return out


class Adam:
    """Adam on a list of arrays, standard bias correction."""

    def __init__(self, shapes: list[tuple], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3) -> "Adam":
        return cls([p.shape for p in params], lr=lr)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray],
             lr: float | None = None) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ContractViolation("Adam state/param/grad length mismatch")
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"m": params_to_flat(self.m), "v": params_to_flat(self.v),
                "t": np.array([self.t], dtype=np.float64)}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        shapes = [m.shape for m in self.m]
        for key, target in (("m", self.m), ("v", self.v)):
            flat = np.asarray(state[key], dtype=np.float64)
            ofs = 0
            for arr, shp in zip(target, shapes):
                n = int(np.prod(shp))
                arr[...] = flat[ofs:ofs + n].reshape(shp)
                ofs += n
            if ofs != flat.size:
                raise ContractViolation("Adam state size mismatch")
        self.t = int(state["t"][0])


@dataclass
class GaussianHead:
    """Diagonal Gaussian with state-independent log std."""

    log_std: np.ndarray

    @classmethod
    def create(cls, dim: int, init_std: float = 1.0) -> "GaussianHead":
        return cls(log_std=np.full(dim, np.log(init_std)))

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def sample(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return mean + self.std * rng.standard_normal(mean.shape)

    def log_prob(self, mean: np.ndarray, actions: np.ndarray) -> np.ndarray:
        d = (actions - mean) / self.std
        return -0.5 * np.sum(d * d, axis=-1) \
            - np.sum(self.log_std) - 0.5 * mean.shape[-1] * np.log(2 * np.pi)

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * len(self.log_std) * np.log(2 * np.pi * np.e))

    def log_prob_grads(self, mean: np.ndarray, actions: np.ndarray):
        """(d logp/d mean, d logp/d log_std), per sample."""
        var = self.std ** 2
        diff = actions - mean
        return diff / var, diff * diff / var - 1.0

    @staticmethod
    def kl(mu_old: np.ndarray, std_old: np.ndarray,
           mu_new: np.ndarray, std_new: np.ndarray) -> np.ndarray:
        """KL(old || new) per sample for diagonal Gaussians."""
        v_old, v_new = std_old ** 2, std_new ** 2
        return np.sum(
            np.log(std_new / std_old)
            + (v_old + (mu_old - mu_new) ** 2) / (2.0 * v_new) - 0.5,
            axis=-1)
