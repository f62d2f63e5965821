"""Reservoir backends: the micromagnetic film and a fast leaky-node surrogate.

Both expose the same small interface used by the harness:

* ``backend_reset(config, h_const, key=())`` builds a resting state,
* ``backend_advance(state, h_total, duration)`` evolves under a constant field,
* ``read_voltage(state)`` returns the Hall-like output.

States carry their own counter-based RNG stream, so independent states can
be advanced concurrently with schedule-independent results.
"""

from __future__ import annotations

import copy
import dataclasses
import functools
import math
from dataclasses import dataclass
from typing import ClassVar

import numba
import numpy as np

from .texture import (
    DEFAULT_CELL_SIZE,
    Boundary,
    MaterialParams,
    SpinLattice,
    evolve,
    place_skyrmion,
    rng_stream,
    seed_texture,
)

HALL_WINDOW = 0.5  # central fraction of the grid seen by the Hall cross
TIME_SCALE = 50.0  # dimensionless time units per second of protocol time

_FILM = dict(anisotropy_k=0.4, field_scale=0.001, damping_alpha=0.5, temperature=0.0002, dt=0.0125)

# Film presets ordered by decreasing DMI.  With the bubble reset A and B hold
# a skyrmion gas near zero bias, C keeps a handful, D relaxes to uniform.
DEVICE_PRESETS = {
    "A": MaterialParams(dmi_d=0.50, **_FILM),
    "B": MaterialParams(dmi_d=0.475, **_FILM),
    "C": MaterialParams(dmi_d=0.46, **_FILM),
    "D": MaterialParams(dmi_d=0.42, **_FILM),
}


def _steps_between(t0: float, t1: float, rate: float) -> int:
    """Number of discrete updates in (t0, t1] for a clock ticking at ``rate``."""
    return math.ceil(t1 * rate - 1e-9) - math.ceil(t0 * rate - 1e-9)


# ---------------------------------------------------------------- micromagnetic


@dataclass(frozen=True)
class MicromagneticConfig:
    """Film simulation settings.

    Reset sequence: uniform +z, a saturating pulse of ``pulse_field`` Oe,
    nucleation, then relaxation under ``h_const`` for ``equilibration_steps``.
    With ``reset_texture = "bubbles"`` nucleation places up to ``nuclei``
    reversed bubbles at random defect sites; ``"band"`` instead reverses a
    stripe spanning the film (a two-wall domain state); ``"none"`` skips it.
    """

    kind: ClassVar[str] = "micromagnetic"

    params: MaterialParams = DEVICE_PRESETS["A"]
    nx: int = 64
    ny: int = 64
    cell_size: float = DEFAULT_CELL_SIZE
    boundary: str = "open"
    equilibration_steps: int = 15000
    pulse_field: float = 1000.0
    pulse_steps: int = 50
    reset_texture: str = "bubbles"
    nuclei: int = 40
    nucleus_radius: float = 4.4
    nucleus_spacing: float = 10.0
    edge_margin: float = 4.0
    time_scale: float = TIME_SCALE
    window: float = HALL_WINDOW
    v_gain: float = 1.0
    v_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", MaterialParams(**self.params))
        Boundary(self.boundary)
        if self.reset_texture not in ("bubbles", "band", "none"):
            raise ValueError(f"unknown reset_texture {self.reset_texture!r}")
        if self.equilibration_steps < 0 or self.pulse_steps < 0 or self.nuclei < 0:
            raise ValueError("step and nucleus counts must be non-negative")
        if not 0 < self.window <= 1:
            raise ValueError("window must be in (0, 1]")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")

    @property
    def steps_per_second(self) -> float:
        return self.time_scale / self.params.dt

    def window_slices(self):
        wx = max(1, int(round(self.nx * self.window)))
        wy = max(1, int(round(self.ny * self.window)))
        x0 = (self.nx - wx) // 2
        y0 = (self.ny - wy) // 2
        return slice(x0, x0 + wx), slice(y0, y0 + wy)

    def replace(self, **changes) -> MicromagneticConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class MicromagneticState:
    config: MicromagneticConfig
    m: np.ndarray  # component-first (3, nx, ny)
    rng: np.random.Generator
    h_const: float
    elapsed_time: float = 0.0

    def lattice(self) -> SpinLattice:
        spins = np.moveaxis(self.m, 0, -1).copy()
        return SpinLattice(spins, self.config.cell_size, Boundary(self.config.boundary))

    def copy(self) -> MicromagneticState:
        return MicromagneticState(self.config, self.m.copy(), copy.deepcopy(self.rng), self.h_const, self.elapsed_time)


def nucleation_sites(config: MicromagneticConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Random bubble centres with a minimum spacing, kept clear of the edges."""
    lo = config.edge_margin + config.nucleus_radius
    hi_x = config.nx - 1 - lo
    hi_y = config.ny - 1 - lo
    sites: list[np.ndarray] = []
    if config.nuclei == 0 or hi_x <= lo or hi_y <= lo:
        return sites
    for _ in range(50 * config.nuclei):
        c = np.array([rng.uniform(lo, hi_x), rng.uniform(lo, hi_y)])
        if all(np.hypot(*(c - s)) >= config.nucleus_spacing for s in sites):
            sites.append(c)
            if len(sites) == config.nuclei:
                break
    return sites


def micromagnetic_reset(config: MicromagneticConfig, h_const: float, key=(), noise_key=()) -> MicromagneticState:
    """Resting texture for bias ``h_const``.

    ``key`` selects the defect pattern and thermal stream; ``noise_key``
    changes only the thermal stream (used to measure run-to-run noise).
    Relaxed states are memoized; callers always receive a private copy.
    """
    return _relaxed(config, float(h_const), tuple(key), tuple(noise_key)).copy()


@functools.lru_cache(maxsize=64)
def _relaxed(config: MicromagneticConfig, h_const: float, key: tuple, noise_key: tuple) -> MicromagneticState:
    texture_rng = rng_stream(config.seed, *key, 0)
    thermal_rng = rng_stream(config.seed, *key, 1, *noise_key)
    periodic = Boundary(config.boundary) is Boundary.PERIODIC
    lat = seed_texture("uniform_up", config.nx, config.ny, cell_size=config.cell_size, boundary=config.boundary)
    m = lat.components()
    evolve(m, config.params, config.pulse_field, config.pulse_steps, thermal_rng, periodic)
    spins = np.moveaxis(m, 0, -1).copy()
    if config.reset_texture == "bubbles":
        for c in nucleation_sites(config, texture_rng):
            place_skyrmion(spins, c, config.nucleus_radius, 1 if config.params.dmi_d >= 0 else -1)
    elif config.reset_texture == "band":
        offset = texture_rng.integers(-2, 3)
        lo = config.nx // 3 + offset
        spins[lo : lo + config.nx // 3] = (0.0, 0.0, -1.0)
    m = np.ascontiguousarray(np.moveaxis(spins, -1, 0))
    evolve(m, config.params, h_const, config.equilibration_steps, thermal_rng, periodic)
    return MicromagneticState(config, m, thermal_rng, float(h_const))


def micromagnetic_advance_(state: MicromagneticState, h_total: float, duration: float) -> MicromagneticState:
    """In-place advance; returns ``state``."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    cfg = state.config
    t1 = state.elapsed_time + duration
    n = _steps_between(state.elapsed_time, t1, cfg.steps_per_second)
    if n > 0:
        evolve(state.m, cfg.params, h_total, n, state.rng, Boundary(cfg.boundary) is Boundary.PERIODIC)
    state.elapsed_time = t1
    return state


def micromagnetic_voltage(state: MicromagneticState) -> float:
    cfg = state.config
    sx, sy = cfg.window_slices()
    return cfg.v_gain * float(np.mean(state.m[2, sx, sy])) + cfg.v_offset


# ---------------------------------------------------------------- surrogate


@dataclass(frozen=True)
class SurrogateParams:
    """Leaky nonlinear node bank.

    Each node obeys, once per update at ``update_rate`` Hz,

        x <- gamma * x + tanh(a*u + b*x + c') - tanh(b*x + c'),

    with u = input_scale * h_total and c' = c + hconst_gain * h_const.  At
    zero drive the increment vanishes, so deviations decay as gamma**n.  The
    node map is a contraction when gamma + |b| < 1 (echo-state check);
    gamma = 1 with b = 0 is a pure integrator.  Per-node gains left as None
    are drawn from ``seed``.
    """

    kind: ClassVar[str] = "surrogate"

    n_nodes: int = 8
    leak_gamma: float = 0.9
    input_gain: tuple | None = None
    feedback_gain: tuple | None = None
    bias: tuple | None = None
    seed: int = 0
    input_scale: float = 1.0 / 24.0
    hconst_gain: float = 3.0
    update_rate: float = 100.0
    v_gain: float = 1.0
    v_offset: float = 0.0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        if not 0 < self.leak_gamma <= 1:
            raise ValueError("leak_gamma must lie in (0, 1]")
        if self.update_rate <= 0:
            raise ValueError("update_rate must be positive")
        for name in ("input_gain", "feedback_gain", "bias"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(x) for x in np.broadcast_to(np.asarray(v, dtype=float), (self.n_nodes,)))
                object.__setattr__(self, name, v)
        _, b, _ = self.node_arrays()
        if np.any(self.leak_gamma + np.abs(b) > 1 + 1e-12):
            raise ValueError("echo-state check failed: leak_gamma + |feedback_gain| must not exceed 1")

    def node_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        a = rng.uniform(0.5, 3.0, self.n_nodes) * rng.choice([-1.0, 1.0], self.n_nodes)
        b = rng.uniform(-0.9, 0.9, self.n_nodes) * (1 - self.leak_gamma)
        c = rng.uniform(-1.5, 1.5, self.n_nodes)
        if self.input_gain is not None:
            a = np.array(self.input_gain)
        if self.feedback_gain is not None:
            b = np.array(self.feedback_gain)
        if self.bias is not None:
            c = np.array(self.bias)
        return a, b, c

    def contraction(self) -> float:
        """Largest per-node Lipschitz bound gamma + |b| of the node map."""
        _, b, _ = self.node_arrays()
        return float(np.max(self.leak_gamma + np.abs(b)))

    def replace(self, **changes) -> SurrogateParams:
        return dataclasses.replace(self, **changes)


@numba.njit(cache=True, nogil=True)
def _node_updates(x, u, n, a, b, c, gamma):
    for _ in range(n):
        for i in range(x.shape[0]):
            z = b[i] * x[i] + c[i]
            x[i] = gamma * x[i] + math.tanh(a[i] * u + z) - math.tanh(z)


@numba.njit(cache=True, nogil=True)
def _node_mean(x):
    # fixed left-to-right order so batched and per-state reads agree bit for bit
    acc = 0.0
    for i in range(x.shape[0]):
        acc += x[i]
    return acc / x.shape[0]


@numba.njit(cache=True, nogil=True)
def _node_drive_batch(x, u, per_sample, read_idx, a, b, c, gamma, out):
    """Drive a batch of node banks.  x: (B, n); u: (B, S); out: (B, R)."""
    n_batch, n_nodes = x.shape
    n_samples = u.shape[1]
    for bi in range(n_batch):
        r = 0
        for s in range(n_samples):
            while r < read_idx.shape[0] and read_idx[r] == s:
                out[bi, r] = _node_mean(x[bi])
                r += 1
            us = u[bi, s]
            for _ in range(per_sample):
                for i in range(n_nodes):
                    z = b[i] * x[bi, i] + c[i]
                    x[bi, i] = gamma * x[bi, i] + math.tanh(a[i] * us + z) - math.tanh(z)


@dataclass
class SurrogateState:
    config: SurrogateParams
    x: np.ndarray
    h_const: float
    elapsed_time: float = 0.0

    def copy(self) -> SurrogateState:
        return SurrogateState(self.config, self.x.copy(), self.h_const, self.elapsed_time)


def _shifted_bias(config: SurrogateParams, h_const: float):
    a, b, c = config.node_arrays()
    return a, b, c + config.hconst_gain * h_const


def surrogate_rest(config: SurrogateParams, h_const: float, max_updates: int = 100_000) -> np.ndarray:
    """Node fixed point under the constant bias (zeros for a pure integrator)."""
    a, b, c = _shifted_bias(config, h_const)
    x = np.zeros(config.n_nodes)
    if config.leak_gamma >= 1:
        return x
    u = config.input_scale * h_const
    for _ in range(max_updates // 100):
        prev = x.copy()
        _node_updates(x, u, 100, a, b, c, config.leak_gamma)
        if np.max(np.abs(x - prev)) == 0.0:
            break
    return x


def surrogate_reset(config: SurrogateParams, h_const: float, key=(), noise_key=()) -> SurrogateState:
    return SurrogateState(config, surrogate_rest(config, h_const), float(h_const))


def surrogate_advance_(state: SurrogateState, h_total: float, duration: float) -> SurrogateState:
    if duration <= 0:
        raise ValueError("duration must be positive")
    cfg = state.config
    t1 = state.elapsed_time + duration
    n = _steps_between(state.elapsed_time, t1, cfg.update_rate)
    if n > 0:
        a, b, c = _shifted_bias(cfg, state.h_const)
        _node_updates(state.x, cfg.input_scale * h_total, n, a, b, c, cfg.leak_gamma)
    state.elapsed_time = t1
    return state


def surrogate_voltage(state: SurrogateState) -> float:
    cfg = state.config
    return cfg.v_gain * _node_mean(state.x) + cfg.v_offset


def surrogate_drive_batch(
    config: SurrogateParams,
    h_const: float,
    h_total: np.ndarray,
    drive_dt: float,
    read_idx: np.ndarray,
) -> np.ndarray:
    """Voltages for many protocols at once, each from a fresh reset.

    ``h_total`` has shape ``(B, S)`` (total field per drive sample);
    voltages are read before drive samples ``read_idx``.  Requires the
    update clock to tick an integer number of times per drive sample.
    """
    per = config.update_rate * drive_dt
    per_sample = int(round(per))
    if per_sample < 1 or abs(per - per_sample) > 1e-9:
        raise ValueError("update_rate * drive_dt must be a positive integer for batched driving")
    h_total = np.ascontiguousarray(np.atleast_2d(h_total), dtype=float)
    a, b, c = _shifted_bias(config, h_const)
    x = np.repeat(surrogate_rest(config, h_const)[None], h_total.shape[0], axis=0)
    out = np.empty((h_total.shape[0], len(read_idx)))
    _node_drive_batch(
        x, config.input_scale * h_total, per_sample, np.asarray(read_idx, dtype=np.int64), a, b, c, config.leak_gamma, out
    )
    return config.v_gain * out + config.v_offset


# ---------------------------------------------------------------- mock


@dataclass(frozen=True)
class LinearMockBackend:
    """Memoryless reference backend: V = gain * (last applied field)."""

    kind: ClassVar[str] = "mock"
    gain: float = 1.0


@dataclass
class MockState:
    config: LinearMockBackend
    h: float
    h_const: float
    elapsed_time: float = 0.0

    def copy(self):
        return dataclasses.replace(self)


# ---------------------------------------------------------------- dispatch



BackendConfig = MicromagneticConfig | SurrogateParams | LinearMockBackend


def backend_reset(config: BackendConfig, h_const: float, key=(), noise_key=()) :
    """Fresh resting state for bias ``h_const`` with ``elapsed_time`` = 0."""
    if not math.isfinite(h_const):
        raise ValueError("h_const must be finite")
    if isinstance(config, MicromagneticConfig):
        return micromagnetic_reset(config, h_const, key, noise_key)
    if isinstance(config, SurrogateParams):
        return surrogate_reset(config, h_const, key, noise_key)
    if isinstance(config, LinearMockBackend):
        return MockState(config, float(h_const), float(h_const))
    raise TypeError(f"unsupported backend config {type(config).__name__}")


def backend_advance_(state, h_total: float, duration: float) :
    """Advance ``state`` in place under constant ``h_total`` for ``duration`` seconds."""
    if isinstance(state, MicromagneticState):
        return micromagnetic_advance_(state, h_total, duration)
    if isinstance(state, MockState):
        if duration <= 0:
            raise ValueError("duration must be positive")
        state.h = float(h_total)
        state.elapsed_time += duration
        return state
    return surrogate_advance_(state, h_total, duration)


def backend_advance(state, h_total: float, duration: float) :
    """Functional advance: the input state is left untouched."""
    return backend_advance_(state.copy(), h_total, duration)


def read_voltage(state) -> float:
    if isinstance(state, MicromagneticState):
        return micromagnetic_voltage(state)
    if isinstance(state, MockState):
        return state.config.gain * state.h
    return surrogate_voltage(state)


