"""Spin-lattice state, thin-film energetics and a stochastic LLG integrator.

The film is a square lattice of unit spins with

    E = -J sum_<ij> m_i.m_j
        - D sum_<ij> (m_i x m_j).(z x e_ij)
        - K sum_i (m_i^z)^2
        - b sum_i m_i^z,            b = field_scale * h_z[Oe]

where <ij> runs over nearest-neighbour bonds, each counted once, and e_ij is
the unit vector from i to j.  The DMI term is the interfacial (Neel) form.
Dipolar interactions are not modelled; their main effect is folded into a
reduced ``anisotropy_k``.

Time is dimensionless (gyromagnetic ratio and spin length set to one), the
equation of motion is

    dm/dt = -m x H - alpha m x (m x H),    H = -dE/dm + h_thermal

integrated with a stochastic Heun (predictor-corrector) scheme in the
Stratonovich sense.  Spins are stored as ``(nx, ny, 3)`` arrays; the
integrator works on component-first ``(3, nx, ny)`` copies.
"""

from __future__ import annotations

import dataclasses
import enum
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import FormatError, GeometryError, StabilityViolation

MIN_EXTENT = 8
DEFAULT_CELL_SIZE = 0.625  # um; 64 cells span the 40 um Hall-bar width
STABILITY_LIMIT = 0.1  # dt * max|H_eff| must stay below this
SNAPSHOT_VERSION = 1


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


@dataclass
class SpinLattice:
    """A 2D grid of unit spins.

    ``spins[i, j]`` is the spin at x-index ``i`` and y-index ``j``.
    """

    spins: np.ndarray
    cell_size: float = DEFAULT_CELL_SIZE
    boundary: Boundary = Boundary.OPEN

    def __post_init__(self):
        spins = np.asarray(self.spins, dtype=float)
        if spins.ndim != 3 or spins.shape[2] != 3:
            raise GeometryError(f"spins must have shape (nx, ny, 3), got {spins.shape}")
        if spins.shape[0] < MIN_EXTENT or spins.shape[1] < MIN_EXTENT:
            raise GeometryError(f"grid {spins.shape[:2]} smaller than {MIN_EXTENT}x{MIN_EXTENT}")
        if not np.all(np.isfinite(spins)):
            raise ValueError("spins contain non-finite values")
        norms = np.linalg.norm(spins, axis=-1)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("spins must have unit length")
        if self.cell_size <= 0:
            raise GeometryError("cell_size must be positive")
        self.spins = spins
        self.boundary = Boundary(self.boundary)

    @property
    def nx(self) -> int:
        return self.spins.shape[0]

    @property
    def ny(self) -> int:
        return self.spins.shape[1]

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    @property
    def area(self) -> float:
        """Film area in um^2."""
        return self.nx * self.ny * self.cell_size**2

    def components(self) -> np.ndarray:
        """Contiguous ``(3, nx, ny)`` copy of the spins."""
        return np.ascontiguousarray(np.moveaxis(self.spins, -1, 0))

    def with_components(self, m: np.ndarray) -> SpinLattice:
        return SpinLattice(np.moveaxis(m, 0, -1).copy(), self.cell_size, self.boundary)

    def copy(self) -> SpinLattice:
        return SpinLattice(self.spins.copy(), self.cell_size, self.boundary)

    def flipped(self) -> SpinLattice:
        return SpinLattice(-self.spins, self.cell_size, self.boundary)


@dataclass(frozen=True)
class MaterialParams:
    """Film parameters in units of the exchange constant.

    ``field_scale`` converts Oe to the dimensionless Zeeman strength and
    ``temperature`` is k_B T / J.
    """

    exchange_j: float = 1.0
    dmi_d: float = 0.45
    anisotropy_k: float = 0.06
    field_scale: float = 0.004
    damping_alpha: float = 0.3
    temperature: float = 0.0
    dt: float = 0.01

    def __post_init__(self):
        if self.damping_alpha <= 0:
            raise ValueError("damping_alpha must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dmi_d < 0 or self.anisotropy_k < 0:
            raise ValueError("dmi_d and anisotropy_k must be non-negative")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.dt * self.field_bound(0.0) >= STABILITY_LIMIT:
            raise StabilityViolation(
                f"dt={self.dt} exceeds stability bound {STABILITY_LIMIT / self.field_bound(0.0):.4g}"
            )

    def field_bound(self, h_z: float) -> float:
        """Upper bound on |H_eff| for any unit-spin configuration (noise excluded)."""
        return (
            4 * abs(self.exchange_j)
            + 4 * self.dmi_d
            + 2 * self.anisotropy_k
            + abs(self.field_scale * h_z)
        )

    def thermal_sigma(self) -> float:
        """Per-component standard deviation of the thermal field for one step."""
        a = self.damping_alpha
        return math.sqrt(2 * a * self.temperature / ((1 + a * a) * self.dt))

    def replace(self, **changes) -> MaterialParams:
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------- energetics


def _field_components(m, J, D, K, b, periodic):
    """-dE/dm for component-first spins ``m`` of shape (3, nx, ny)."""
    H = np.zeros_like(m)
    if periodic:
        # neighbours at +x, -x, +y, -y
        xp = np.roll(m, -1, axis=1)
        xm = np.roll(m, 1, axis=1)
        yp = np.roll(m, -1, axis=2)
        ym = np.roll(m, 1, axis=2)
        H += J * (xp + xm + yp + ym)
        # x bonds: d = z x x = +y ; y bonds: d = z x y = -x
        H[0] += D * (xm[2] - xp[2])
        H[2] += D * (xp[0] - xm[0])
        H[1] += D * (ym[2] - yp[2])
        H[2] += D * (yp[1] - ym[1])
    else:
        H[:, :-1] += J * m[:, 1:]
        H[:, 1:] += J * m[:, :-1]
        H[:, :, :-1] += J * m[:, :, 1:]
        H[:, :, 1:] += J * m[:, :, :-1]
        H[0, :-1] -= D * m[2, 1:]
        H[2, :-1] += D * m[0, 1:]
        H[0, 1:] += D * m[2, :-1]
        H[2, 1:] -= D * m[0, :-1]
        H[1, :, :-1] -= D * m[2, :, 1:]
        H[2, :, :-1] += D * m[1, :, 1:]
        H[1, :, 1:] += D * m[2, :, :-1]
        H[2, :, 1:] -= D * m[1, :, :-1]
    H[2] += 2 * K * m[2] + b
    return H


def effective_field(lattice: SpinLattice, params: MaterialParams, h_z: float) -> np.ndarray:
    """Return -dE/dm for every site as an ``(nx, ny, 3)`` array."""
    H = _field_components(
        lattice.components(),
        params.exchange_j,
        params.dmi_d,
        params.anisotropy_k,
        params.field_scale * h_z,
        lattice.periodic,
    )
    return np.moveaxis(H, 0, -1).copy()


def _bond_pairs(m, periodic):
    """Yield (m_i, m_j, axis) arrays for every x- and y-bond."""
    if periodic:
        yield m, np.roll(m, -1, axis=1), 0
        yield m, np.roll(m, -1, axis=2), 1
    else:
        yield m[:, :-1], m[:, 1:], 0
        yield m[:, :, :-1], m[:, :, 1:], 1


def energy_terms(lattice: SpinLattice, params: MaterialParams, h_z: float) -> dict[str, float]:
    """Energy split into exchange, dmi, anisotropy and zeeman contributions."""
    m = lattice.components()
    ex = 0.0
    dmi = 0.0
    for mi, mj, axis in _bond_pairs(m, lattice.periodic):
        ex -= params.exchange_j * float(np.sum(mi * mj))
        if axis == 0:
            # (mi x mj).y
            dmi -= params.dmi_d * float(np.sum(mi[2] * mj[0] - mi[0] * mj[2]))
        else:
            # (mi x mj).(-x)
            dmi += params.dmi_d * float(np.sum(mi[1] * mj[2] - mi[2] * mj[1]))
    return {
        "exchange": ex,
        "dmi": dmi,
        "anisotropy": -params.anisotropy_k * float(np.sum(m[2] ** 2)),
        "zeeman": -params.field_scale * h_z * float(np.sum(m[2])),
    }


def total_energy(lattice: SpinLattice, params: MaterialParams, h_z: float) -> float:
    return sum(energy_terms(lattice, params, h_z).values())


# ---------------------------------------------------------------- dynamics


@numba.njit(cache=True, nogil=True)
def _site_field(m, i, j, nx, ny, J, D, K, b, periodic):
    hx = 0.0
    hy = 0.0
    hz = 0.0
    n = i + 1
    if n == nx:
        n = 0 if periodic else -1
    if n >= 0:
        hx += J * m[0, n, j] - D * m[2, n, j]
        hy += J * m[1, n, j]
        hz += J * m[2, n, j] + D * m[0, n, j]
    n = i - 1
    if n < 0:
        n = nx - 1 if periodic else -1
    if n >= 0:
        hx += J * m[0, n, j] + D * m[2, n, j]
        hy += J * m[1, n, j]
        hz += J * m[2, n, j] - D * m[0, n, j]
    n = j + 1
    if n == ny:
        n = 0 if periodic else -1
    if n >= 0:
        hx += J * m[0, i, n]
        hy += J * m[1, i, n] - D * m[2, i, n]
        hz += J * m[2, i, n] + D * m[1, i, n]
    n = j - 1
    if n < 0:
        n = ny - 1 if periodic else -1
    if n >= 0:
        hx += J * m[0, i, n]
        hy += J * m[1, i, n] + D * m[2, i, n]
        hz += J * m[2, i, n] - D * m[1, i, n]
    hz += 2.0 * K * m[2, i, j] + b
    return hx, hy, hz


@numba.njit(cache=True, nogil=True)
def _torque(ax, ay, az, hx, hy, hz, alpha):
    cx = ay * hz - az * hy
    cy = az * hx - ax * hz
    cz = ax * hy - ay * hx
    dx = ay * cz - az * cy
    dy = az * cx - ax * cz
    dz = ax * cy - ay * cx
    return -cx - alpha * dx, -cy - alpha * dy, -cz - alpha * dz


@numba.njit(cache=True, nogil=True)
def _heun_steps(m, noise, n_steps, J, D, K, b, alpha, dt, periodic):
    """Advance ``m`` in place by ``n_steps``; ``noise`` is (n, 3, nx, ny) or empty.

    Returns the 1-based index of the first step in which a spin turned by more
    than pi/2, or 0 when all steps were accepted.
    """
    _, nx, ny = m.shape
    f0 = np.empty_like(m)
    mp = np.empty_like(m)
    thermal = noise.shape[0] > 0
    for s in range(n_steps):
        for i in range(nx):
            for j in range(ny):
                hx, hy, hz = _site_field(m, i, j, nx, ny, J, D, K, b, periodic)
                if thermal:
                    hx += noise[s, 0, i, j]
                    hy += noise[s, 1, i, j]
                    hz += noise[s, 2, i, j]
                fx, fy, fz = _torque(m[0, i, j], m[1, i, j], m[2, i, j], hx, hy, hz, alpha)
                f0[0, i, j] = fx
                f0[1, i, j] = fy
                f0[2, i, j] = fz
                px = m[0, i, j] + dt * fx
                py = m[1, i, j] + dt * fy
                pz = m[2, i, j] + dt * fz
                r = np.sqrt(px * px + py * py + pz * pz)
                mp[0, i, j] = px / r
                mp[1, i, j] = py / r
                mp[2, i, j] = pz / r
        bad = False
        for i in range(nx):
            for j in range(ny):
                hx, hy, hz = _site_field(mp, i, j, nx, ny, J, D, K, b, periodic)
                if thermal:
                    hx += noise[s, 0, i, j]
                    hy += noise[s, 1, i, j]
                    hz += noise[s, 2, i, j]
                fx, fy, fz = _torque(mp[0, i, j], mp[1, i, j], mp[2, i, j], hx, hy, hz, alpha)
                ox = m[0, i, j]
                oy = m[1, i, j]
                oz = m[2, i, j]
                qx = ox + 0.5 * dt * (f0[0, i, j] + fx)
                qy = oy + 0.5 * dt * (f0[1, i, j] + fy)
                qz = oz + 0.5 * dt * (f0[2, i, j] + fz)
                r = np.sqrt(qx * qx + qy * qy + qz * qz)
                qx /= r
                qy /= r
                qz /= r
                if qx * ox + qy * oy + qz * oz < 0.0:
                    bad = True
                # mp is no longer read at (i, j) after this point, so m can be
                # updated only after the sweep; stash the result in f0.
                f0[0, i, j] = qx
                f0[1, i, j] = qy
                f0[2, i, j] = qz
        if bad:
            return s + 1
        m[:, :, :] = f0
    return 0


_NOISE_BLOCK = 64


def evolve(
    m: np.ndarray,
    params: MaterialParams,
    h_z: float,
    n_steps: int,
    rng: np.random.Generator | None,
    periodic: bool = False,
) -> np.ndarray:
    """Advance component-first spins ``m`` in place by ``n_steps`` Heun steps.

    Thermal noise is drawn from ``rng`` in blocks of at most 64 steps; at zero
    temperature ``rng`` is not touched and may be None.
    """
    if params.dt * params.field_bound(h_z) >= STABILITY_LIMIT:
        raise StabilityViolation(
            f"dt * max|H_eff| = {params.dt * params.field_bound(h_z):.3g} >= {STABILITY_LIMIT}"
        )
    sigma = params.thermal_sigma()
    args = (
        params.exchange_j,
        params.dmi_d,
        params.anisotropy_k,
        params.field_scale * h_z,
        params.damping_alpha,
        params.dt,
        periodic,
    )
    empty = np.empty((0,) + m.shape)
    done = 0
    while done < n_steps:
        block = min(_NOISE_BLOCK, n_steps - done)
        if sigma > 0:
            if rng is None:
                raise ValueError("rng required at non-zero temperature")
            noise = rng.standard_normal((block,) + m.shape)
            noise *= sigma
        else:
            noise = empty
        status = _heun_steps(m, noise, block, *args)
        if status:
            raise StabilityViolation(f"spin rotated by more than pi/2 in step {done + status}")
        done += block
    return m


def llg_step(
    lattice: SpinLattice,
    params: MaterialParams,
    h_z: float,
    rng: np.random.Generator | None = None,
) -> SpinLattice:
    """One stochastic Heun step; returns a new lattice."""
    m = lattice.components()
    evolve(m, params, h_z, 1, rng, lattice.periodic)
    return lattice.with_components(m)


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based (Philox) generator for the stream identified by ``key``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------- textures


def _uniform(nx, ny, sign):
    spins = np.zeros((nx, ny, 3))
    spins[..., 2] = sign
    return spins


def place_skyrmion(spins: np.ndarray, center, radius: float, chirality: int = 1) -> None:
    """Write a Neel skyrmion with core down into ``spins`` (modified in place).

    Polar angle follows theta(r) = pi * clamp(1 - r/radius, 0, 1); cells with
    r >= radius are left untouched.  ``chirality`` = +1 puts the in-plane
    component along -r_hat, which is the low-energy sense for positive DMI.
    """
    nx, ny = spins.shape[:2]
    cx, cy = center
    if radius < 2:
        raise GeometryError("skyrmion radius must be at least 2 cells")
    if cx - radius < 0 or cy - radius < 0 or cx + radius > nx - 1 or cy + radius > ny - 1:
        raise GeometryError(f"skyrmion at {center} with radius {radius} does not fit {nx}x{ny}")
    x, y = np.meshgrid(np.arange(nx) - cx, np.arange(ny) - cy, indexing="ij")
    r = np.hypot(x, y)
    inside = r < radius
    theta = np.pi * np.clip(1 - r / radius, 0, 1)
    phi = np.arctan2(y, x)
    s = -1.0 if chirality >= 0 else 1.0
    spins[inside, 0] = s * np.sin(theta[inside]) * np.cos(phi[inside])
    spins[inside, 1] = s * np.sin(theta[inside]) * np.sin(phi[inside])
    spins[inside, 2] = np.cos(theta[inside])


def seed_texture(
    kind: str,
    nx: int = 64,
    ny: int = 64,
    *,
    center=None,
    radius: float | None = None,
    seed: int = 0,
    dmi_d: float = 1.0,
    period: float = 14.0,
    cell_size: float = DEFAULT_CELL_SIZE,
    boundary: Boundary | str = Boundary.OPEN,
) -> SpinLattice:
    """Build an initial texture.

    ``kind`` is one of ``uniform_up``, ``uniform_down``, ``skyrmion``
    (needs ``center`` and ``radius``), ``random`` or ``labyrinth`` (both use
    ``seed``).  The labyrinth is a superposition of three Neel spirals of the
    given ``period`` with random phases, projected back to unit length.
    """
    if nx < MIN_EXTENT or ny < MIN_EXTENT:
        raise GeometryError(f"grid {nx}x{ny} smaller than {MIN_EXTENT}x{MIN_EXTENT}")
    chirality = 1 if dmi_d >= 0 else -1
    if kind == "uniform_up":
        spins = _uniform(nx, ny, 1.0)
    elif kind == "uniform_down":
        spins = _uniform(nx, ny, -1.0)
    elif kind == "skyrmion":
        if center is None or radius is None:
            raise GeometryError("skyrmion texture needs center and radius")
        spins = _uniform(nx, ny, 1.0)
        place_skyrmion(spins, center, radius, chirality)
    elif kind == "random":
        rng = np.random.default_rng(seed)
        spins = rng.standard_normal((nx, ny, 3))
        spins /= np.linalg.norm(spins, axis=-1, keepdims=True)
    elif kind == "labyrinth":
        rng = np.random.default_rng(seed)
        x, y = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        k = 2 * np.pi / period
        spins = np.zeros((nx, ny, 3))
        for angle, phase in zip(rng.uniform(0, np.pi, 3), rng.uniform(0, 2 * np.pi, 3)):
            ux, uy = np.cos(angle), np.sin(angle)
            arg = k * (ux * x + uy * y) + phase
            spins[..., 0] += -chirality * np.sin(arg) * ux
            spins[..., 1] += -chirality * np.sin(arg) * uy
            spins[..., 2] += np.cos(arg)
        spins += 1e-3 * rng.standard_normal(spins.shape)
        spins /= np.linalg.norm(spins, axis=-1, keepdims=True)
    else:
        raise ValueError(f"unknown texture kind {kind!r}")
    return SpinLattice(spins, cell_size, Boundary(boundary))


# ---------------------------------------------------------------- snapshots


def save_snapshot(path, lattice: SpinLattice, params: MaterialParams | None = None) -> None:
    """Write a versioned CSV snapshot: one JSON header line, then x,y,mx,my,mz rows."""
    header = {
        "format": "skyrmion_rc.snapshot",
        "version": SNAPSHOT_VERSION,
        "nx": lattice.nx,
        "ny": lattice.ny,
        "cell_size": lattice.cell_size,
        "boundary": lattice.boundary.value,
        "params": dataclasses.asdict(params) if params is not None else None,
    }
    x, y = np.meshgrid(np.arange(lattice.nx), np.arange(lattice.ny), indexing="ij")
    rows = np.column_stack([x.ravel(), y.ravel(), lattice.spins.reshape(-1, 3)])
    buf = io.StringIO()
    buf.write("# " + json.dumps(header) + "\n")
    buf.write("x,y,mx,my,mz\n")
    np.savetxt(buf, rows, delimiter=",", fmt=["%d", "%d", "%.17g", "%.17g", "%.17g"])
    Path(path).write_text(buf.getvalue())


def load_snapshot(path) -> tuple[SpinLattice, MaterialParams | None]:
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    if not first.startswith("# "):
        raise FormatError("snapshot header missing")
    try:
        header = json.loads(first[2:])
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad snapshot header: {exc}") from None
    if header.get("format") != "skyrmion_rc.snapshot" or header.get("version") != SNAPSHOT_VERSION:
        raise FormatError("unsupported snapshot format or version")
    nx, ny = header["nx"], header["ny"]
    rows = np.loadtxt(io.StringIO(rest), delimiter=",", skiprows=1, ndmin=2)
    if rows.shape != (nx * ny, 5):
        raise FormatError(f"expected {nx * ny} rows of 5 columns, got {rows.shape}")
    spins = np.zeros((nx, ny, 3))
    spins[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2:]
    params = MaterialParams(**header["params"]) if header.get("params") else None
    return SpinLattice(spins, header["cell_size"], Boundary(header["boundary"])), params
