"""1-D terrain height profiles: plane, rough, stair and slope.

Heights are deterministic functions of (parameters, seed).  Rough terrain is
piecewise-linear noise built from a counter-based integer hash so that the
same profile can be evaluated at arbitrary x without storing a grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

TERRAIN_KINDS = ("plane", "rough", "stair", "slope")

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = (x + _MIX1).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX2
    z = (z ^ (z >> np.uint64(27))) * _MIX3
    return z ^ (z >> np.uint64(31))


def _cell_noise(cell: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic uniform noise in [-1, 1) per integer cell index."""
    c = np.asarray(cell, dtype=np.int64).astype(np.uint64)
    s = np.array(seed, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(c * _MIX3 + _splitmix64(np.atleast_1d(s))[0])
    u = (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return 2.0 * u - 1.0


@dataclass(frozen=True)
class TerrainProfile:
    """A height profile h(x) over the forward axis.

    Parameters not used by a kind are ignored.  Stair steps ascend in +x;
    slope rises in +x for positive angles.
    """

    kind: str = "plane"
    step_height: float = 0.0   # m, stair
    step_width: float = 0.2    # m, stair
    slope_angle: float = 0.0   # rad, slope
    rough_amplitude: float = 0.0   # m, rough (peak)
    rough_corr_len: float = 0.15   # m, rough cell size
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TERRAIN_KINDS:
            raise ContractViolation(f"unknown terrain kind {self.kind!r}")
        if self.kind == "stair" and self.step_width <= 0:
            raise ContractViolation("stair step_width must be > 0")
        if self.kind == "rough" and self.rough_corr_len <= 0:
            raise ContractViolation("rough_corr_len must be > 0")

    def height(self, x):
        """Terrain height at x (scalar or array, vectorized)."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ContractViolation("terrain query at non-finite x")
        if self.kind == "plane":
            return np.zeros_like(x)
        if self.kind == "slope":
            return x * np.tan(self.slope_angle)
        if self.kind == "stair":
            return np.floor(x / self.step_width) * self.step_height
        # rough: linear interpolation between per-cell corner values
        u = x / self.rough_corr_len
        i = np.floor(u)
        frac = u - i
        v0 = _cell_noise(i, self.seed)
        v1 = _cell_noise(i + 1, self.seed)
        return self.rough_amplitude * (v0 + (v1 - v0) * frac)

    def slope(self, x):
        """dh/dx at x; stair treads and planes are flat."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind in ("plane", "stair"):
            return np.zeros_like(x)
        if self.kind == "slope":
            return np.full_like(x, np.tan(self.slope_angle))
        u = x / self.rough_corr_len
        i = np.floor(u)
        v0 = _cell_noise(i, self.seed)
        v1 = _cell_noise(i + 1, self.seed)
        return self.rough_amplitude * (v1 - v0) / self.rough_corr_len


def sample_height(terrain: TerrainProfile, x):
    """Height of the profile at x (the functional spelling of .height)."""
    return terrain.height(x)


@dataclass
class TerrainBatch:
    """Per-environment terrain parameters in array form for vectorized lookup."""

    kind: np.ndarray          # (N,) int codes into TERRAIN_KINDS
    p1: np.ndarray            # step_height | slope_angle | rough_amplitude
    p2: np.ndarray            # step_width  | -           | rough_corr_len
    seed: np.ndarray          # (N,) int64
    profiles: list = field(default_factory=list)

    @classmethod
    def from_profiles(cls, profiles: list[TerrainProfile]) -> "TerrainBatch":
        n = len(profiles)
        kind = np.zeros(n, dtype=np.int64)
        p1 = np.zeros(n)
        p2 = np.ones(n)
        seed = np.zeros(n, dtype=np.int64)
        b = cls(kind=kind, p1=p1, p2=p2, seed=seed, profiles=list(profiles))
        for i, pr in enumerate(profiles):
            b.set_profile(i, pr)
        return b

    def set_profile(self, i: int, pr: TerrainProfile) -> None:
        self.profiles[i] = pr
        self.kind[i] = TERRAIN_KINDS.index(pr.kind)
        if pr.kind == "stair":
            self.p1[i], self.p2[i] = pr.step_height, pr.step_width
        elif pr.kind == "slope":
            self.p1[i], self.p2[i] = pr.slope_angle, 1.0
        elif pr.kind == "rough":
            self.p1[i], self.p2[i] = pr.rough_amplitude, pr.rough_corr_len
        else:
            self.p1[i], self.p2[i] = 0.0, 1.0
        self.seed[i] = pr.seed

    def heights(self, x: np.ndarray) -> np.ndarray:
        """Heights for queries x of shape (N, ...) with row i using profile i."""
        return self._eval(x, want_slope=False)

    def slopes(self, x: np.ndarray) -> np.ndarray:
        return self._eval(x, want_slope=True)

    def _eval(self, x: np.ndarray, want_slope: bool) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        kind = self.kind.reshape((-1,) + (1,) * (x.ndim - 1))
        p1 = self.p1.reshape(kind.shape)
        p2 = self.p2.reshape(kind.shape)
        seed = self.seed.reshape(kind.shape)

        m_slope = kind == TERRAIN_KINDS.index("slope")
        if m_slope.any():
            v = np.tan(p1) if want_slope else x * np.tan(p1)
            out = np.where(m_slope, v, out)
        m_stair = kind == TERRAIN_KINDS.index("stair")
        if m_stair.any():
            if want_slope:
                v = np.zeros_like(x)
            else:
                w = np.where(m_stair, p2, 1.0)
                v = np.floor(x / w) * p1
            out = np.where(m_stair, v, out)
        m_rough = kind == TERRAIN_KINDS.index("rough")
        if m_rough.any():
            corr = np.where(m_rough, p2, 1.0)
            u = x / corr
            i = np.floor(u)
            c = np.asarray(i, dtype=np.int64).astype(np.uint64)
            s = seed.astype(np.int64).astype(np.uint64)
            with np.errstate(over="ignore"):
                base = _splitmix64(s)
                v0 = _hash_to_unit(c * _MIX3 + base)
                v1 = _hash_to_unit((c + np.uint64(1)) * _MIX3 + base)
            if want_slope:
                v = p1 * (v1 - v0) / corr
            else:
                v = p1 * (v0 + (v1 - v0) * (u - i))
            out = np.where(m_rough, v, out)
        return out


def _hash_to_unit(x: np.ndarray) -> np.ndarray:
    h = _splitmix64(x)
    return 2.0 * ((h >> np.uint64(11)).astype(np.float64) / float(1 << 53)) - 1.0
