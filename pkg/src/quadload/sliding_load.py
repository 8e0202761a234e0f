"""Coulomb stick-slip dynamics of a box riding the carrying plate.

The load is a point mass constrained to the plate line while in contact.
With plate-frame coordinate s (m, 0 at plate centre), unit tangent t and
normal n of the plate, plate origin acceleration c'' and angular rate/accel
th', th'':

    N     = m (c''.n + 2 s' th' + s th'' - g.n)          (support force)
    s''   = D + F/m,   D = g.t - c''.t + s th'^2         (drive term)
    stick iff s' = 0 and |m D| <= mu N, then F = -m D, s'' = 0
    slip  otherwise with F = -mu N sign(s' or impending D)

Contact is lost (mode `fallen`) when N <= 0 or when |s| exceeds the plate
half-length.  An airborne mode covers the scripted drop used in the
stationary evaluation; landing is plastic in the normal direction and the
landing impulse is reported so the caller can kick the robot base.

All state transitions are exact: a stuck load has s' identically zero, and
a slipping load that crosses zero velocity is clamped to rest so the stick
test applies on the next step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation

MODE_ON_PLATE = 0
MODE_AIRBORNE = 1
MODE_FALLEN = 2
MODE_NAMES = ("on_plate", "airborne", "fallen")

# airborne load this far below the plate line is unrecoverable
_MISS_DEPTH = 0.05


@dataclass(frozen=True)
class LoadParams:
    mass: float      # kg
    friction: float  # Coulomb coefficient against the plate
    size: float      # box edge length, m (affects spawn bounds only)

    def __post_init__(self):
        if self.mass <= 0 or self.friction < 0 or self.size <= 0:
            raise ContractViolation(f"bad load params {self}")


@dataclass(frozen=True)
class LoadState:
    pos: float = 0.0        # plate-frame coordinate s
    vel: float = 0.0        # slip rate s' relative to the plate
    mode: int = MODE_ON_PLATE
    world_pos: tuple[float, float] = (0.0, 0.0)  # used while airborne
    world_vel: tuple[float, float] = (0.0, 0.0)

    @property
    def on_plate(self) -> bool:
        return self.mode == MODE_ON_PLATE

    @property
    def fallen(self) -> bool:
        return self.mode == MODE_FALLEN

    @classmethod
    def riding(cls, pos: float = 0.0, vel: float = 0.0) -> "LoadState":
        return cls(pos=pos, vel=vel, mode=MODE_ON_PLATE)

    @classmethod
    def airborne(cls, world_pos, world_vel) -> "LoadState":
        return cls(mode=MODE_AIRBORNE,
                   world_pos=tuple(float(v) for v in world_pos),
                   world_vel=tuple(float(v) for v in world_vel))


@dataclass(frozen=True)
class PlateKinematics:
    """Pose, velocity and acceleration of the plate frame (origin = centre)."""

    pos: tuple[float, float]
    vel: tuple[float, float]
    acc: tuple[float, float]
    angle: float
    ang_vel: float
    ang_acc: float


@dataclass(frozen=True)
class LoadWrench:
    """Reaction on the plate: force at `point`, plus any landing impulse."""

    force: tuple[float, float]
    point: tuple[float, float]
    normal: float        # support force N on the load (>= 0 while in contact)
    friction: float      # tangential force F on the load
    impulse: float       # plastic landing impulse along -n on the plate, N*s
    slipping: bool

    ZERO = None  # set below


LoadWrench.ZERO = LoadWrench((0.0, 0.0), (0.0, 0.0), 0.0, 0.0, 0.0, False)


@dataclass
class LoadArrays:
    """Per-environment load state in array form."""

    mode: np.ndarray   # (N,) int8
    s: np.ndarray      # (N,)
    ds: np.ndarray     # (N,)
    wp: np.ndarray     # (N,2) world position while airborne
    wv: np.ndarray     # (N,2)
    mass: np.ndarray   # (N,)
    mu: np.ndarray     # (N,)
    size: np.ndarray   # (N,)

    @classmethod
    def zeros(cls, n: int) -> "LoadArrays":
        return cls(mode=np.zeros(n, dtype=np.int8), s=np.zeros(n), ds=np.zeros(n),
                   wp=np.zeros((n, 2)), wv=np.zeros((n, 2)),
                   mass=np.ones(n), mu=np.full(n, 0.1), size=np.full(n, 0.1))


@dataclass
class LoadStepOut:
    """Reaction of the load on the plate, arrays over environments."""

    force: np.ndarray     # (N,2) world force on the plate (zero out of contact)
    point: np.ndarray     # (N,2) world application point
    normal: np.ndarray    # (N,) support force on the load
    friction: np.ndarray  # (N,)
    impulse: np.ndarray   # (N,) landing impulse magnitude along -n
    slipping: np.ndarray  # (N,) bool


def step_load_arrays(ld: LoadArrays,
                     plate_pos: np.ndarray, plate_vel: np.ndarray,
                     plate_acc: np.ndarray, angle: np.ndarray,
                     ang_vel: np.ndarray, ang_acc: np.ndarray,
                     half_len: float, gravity: float, dt: float) -> LoadStepOut:
    """Advance every load one substep in place; return plate reactions."""
    n = ld.s.shape[0]
    ct, st = np.cos(angle), np.sin(angle)
    t_hat = np.stack([ct, st], axis=-1)
    n_hat = np.stack([-st, ct], axis=-1)
    g_vec = np.array([0.0, -gravity])

    force = np.zeros((n, 2))
    point = plate_pos + ld.s[:, None] * t_hat
    normal = np.zeros(n)
    friction = np.zeros(n)
    impulse = np.zeros(n)
    slipping = np.zeros(n, dtype=bool)

    on = ld.mode == MODE_ON_PLATE
    if on.any():
        acc_n = np.einsum("ni,ni->n", plate_acc, n_hat)
        acc_t = np.einsum("ni,ni->n", plate_acc, t_hat)
        g_n = g_vec @ np.stack([-st, ct], axis=-1).T  # == -gravity*ct
        g_t = g_vec @ np.stack([ct, st], axis=-1).T   # == -gravity*st
        N = ld.mass * (acc_n + 2.0 * ld.ds * ang_vel + ld.s * ang_acc - g_n)
        D = g_t - acc_t + ld.s * ang_vel ** 2

        lost = on & (N <= 0.0)
        hold = on & ~lost
        if hold.any():
            muN = ld.mu * N
            at_rest = hold & (ld.ds == 0.0)
            stick = at_rest & (np.abs(ld.mass * D) <= muN)
            slip = hold & ~stick
            # friction force on the load
            F = np.zeros(n)
            F[stick] = -(ld.mass * D)[stick]
            sgn = np.where(ld.ds != 0.0, np.sign(ld.ds), np.sign(D))
            F[slip] = (-muN * sgn)[slip]
            sdd = np.where(slip, D + F / ld.mass, 0.0)
            ds_new = np.where(hold, ld.ds + sdd * dt, ld.ds)
            # a slipping load crossing zero velocity comes to rest this step
            crossed = slip & (ld.ds != 0.0) & (ds_new * ld.ds <= 0.0)
            ds_new[crossed] = 0.0
            ld.ds = np.where(hold, ds_new, ld.ds)
            ld.s = np.where(hold, ld.s + ld.ds * dt, ld.s)
            normal[hold] = N[hold]
            friction[hold] = F[hold]
            slipping |= slip
            force_held = -(N[:, None] * n_hat + F[:, None] * t_hat)
            force[hold] = force_held[hold]
            point = plate_pos + ld.s[:, None] * t_hat
            off = hold & (np.abs(ld.s) > half_len)
            ld.mode[off] = MODE_FALLEN
        ld.mode[lost] = MODE_FALLEN

    air = ld.mode == MODE_AIRBORNE
    if air.any():
        r = ld.wp - plate_pos
        h_before = np.einsum("ni,ni->n", r, n_hat)
        ld.wv[air] += g_vec * dt
        ld.wp[air] += ld.wv[air] * dt
        r = ld.wp - plate_pos
        h_after = np.einsum("ni,ni->n", r, n_hat)
        along = np.einsum("ni,ni->n", r, t_hat)
        # plate-point velocity at the crossing location
        omega_cross = np.stack([-ang_vel * r[:, 1], ang_vel * r[:, 0]], axis=-1)
        v_plate_pt = plate_vel + omega_cross
        v_rel = ld.wv - v_plate_pt
        v_rel_n = np.einsum("ni,ni->n", v_rel, n_hat)
        caught = air & (h_before > 0.0) & (h_after <= 0.0) \
            & (np.abs(along) <= half_len) & (v_rel_n < 0.0)
        if caught.any():
            ld.mode[caught] = MODE_ON_PLATE
            ld.s[caught] = along[caught]
            ld.ds[caught] = np.einsum("ni,ni->n", v_rel, t_hat)[caught]
            J = (-ld.mass * v_rel_n)
            impulse[caught] = J[caught]
            point[caught] = (plate_pos + along[:, None] * t_hat)[caught]
        missed = air & ~caught & (h_after < -_MISS_DEPTH)
        ld.mode[missed] = MODE_FALLEN

    return LoadStepOut(force=force, point=point, normal=normal,
                       friction=friction, impulse=impulse, slipping=slipping)


def step_load(state: LoadState, params: LoadParams, plate: PlateKinematics,
              half_len: float, gravity: float = 9.81,
              dt: float = 1.0 / 200.0) -> tuple[LoadState, LoadWrench]:
    """Scalar convenience wrapper over step_load_arrays."""
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    ld = LoadArrays(
        mode=np.array([state.mode], dtype=np.int8),
        s=np.array([state.pos]), ds=np.array([state.vel]),
        wp=np.array([state.world_pos]), wv=np.array([state.world_vel]),
        mass=np.array([params.mass]), mu=np.array([params.friction]),
        size=np.array([params.size]))
    out = step_load_arrays(
        ld,
        plate_pos=np.array([plate.pos]), plate_vel=np.array([plate.vel]),
        plate_acc=np.array([plate.acc]), angle=np.array([plate.angle]),
        ang_vel=np.array([plate.ang_vel]), ang_acc=np.array([plate.ang_acc]),
        half_len=half_len, gravity=gravity, dt=dt)
    new = LoadState(pos=float(ld.s[0]), vel=float(ld.ds[0]), mode=int(ld.mode[0]),
                    world_pos=(float(ld.wp[0, 0]), float(ld.wp[0, 1])),
                    world_vel=(float(ld.wv[0, 0]), float(ld.wv[0, 1])))
    wrench = LoadWrench(force=(float(out.force[0, 0]), float(out.force[0, 1])),
                        point=(float(out.point[0, 0]), float(out.point[0, 1])),
                        normal=float(out.normal[0]), friction=float(out.friction[0]),
                        impulse=float(out.impulse[0]), slipping=bool(out.slipping[0]))
    return new, wrench


def load_characteristics(state: LoadState, params: LoadParams,
                         plate_center_x: float = 0.0) -> np.ndarray:
    """[position, velocity, mass, friction]; zeros when the load is gone.

    Position/velocity are expressed along the base x axis (the plate is
    rigid in the base frame, so they reduce to the plate coordinate plus
    the mounting offset).
    """
    if state.mode != MODE_ON_PLATE:
        return np.zeros(4)
    return np.array([state.pos + plate_center_x, state.vel,
                     params.mass, params.friction])


def load_characteristics_arrays(ld: LoadArrays, plate_center_x: float = 0.0) -> np.ndarray:
    """(N, 4) batch version of load_characteristics."""
    on = (ld.mode == MODE_ON_PLATE).astype(np.float64)
    out = np.stack([ld.s + plate_center_x, ld.ds, ld.mass, ld.mu], axis=-1)
    return out * on[:, None]
