import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_unit_spins
from skyrmion_rc.analysis import topological_charge
from skyrmion_rc.errors import FormatError, GeometryError, StabilityViolation
from skyrmion_rc.texture import (
    Boundary,
    MaterialParams,
    SpinLattice,
    effective_field,
    energy_terms,
    evolve,
    llg_step,
    load_snapshot,
    place_skyrmion,
    rng_stream,
    save_snapshot,
    seed_texture,
    total_energy,
)

PARAMS = MaterialParams(dmi_d=0.45, anisotropy_k=0.06, field_scale=0.004)


def fd_gradient(lattice, params, h, step=1e-5):
    """Central finite difference of the total energy, one component at a time."""
    g = np.zeros_like(lattice.spins)
    base = lattice.spins
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += step
        minus[idx] -= step
        # energy is evaluated on unnormalized spins: build lattices bypassing the unit check
        e_plus = _raw_energy(plus, lattice, params, h)
        e_minus = _raw_energy(minus, lattice, params, h)
        g[idx] = (e_plus - e_minus) / (2 * step)
    return g


def _raw_energy(spins, lattice, params, h):
    fake = SpinLattice.__new__(SpinLattice)
    fake.spins, fake.cell_size, fake.boundary = spins, lattice.cell_size, lattice.boundary
    return total_energy(fake, params, h)


def brute_energy(spins, params, h, periodic):
    """Term-by-term sum over bonds, written independently of the vectorized code."""
    nx, ny, _ = spins.shape
    e = 0.0
    for i in range(nx):
        for j in range(ny):
            m = spins[i, j]
            e -= params.anisotropy_k * m[2] ** 2 + params.field_scale * h * m[2]
            for di, dj, d in ((1, 0, np.array([0.0, 1.0, 0.0])), (0, 1, np.array([-1.0, 0.0, 0.0]))):
                ii, jj = i + di, j + dj
                if periodic:
                    ii, jj = ii % nx, jj % ny
                elif ii >= nx or jj >= ny:
                    continue
                n = spins[ii, jj]
                e -= params.exchange_j * m @ n
                e -= params.dmi_d * np.cross(m, n) @ d
    return e


class TestEffectiveField:
    def test_uniform_state_field_is_aligned_and_equal(self):
        lat = seed_texture("uniform_up", 10, 10)
        H = effective_field(lat, PARAMS.replace(dmi_d=0.0), 0.0)
        assert np.allclose(H[..., :2], 0)
        interior = H[1:-1, 1:-1, 2]
        assert np.allclose(interior, interior[0, 0])

    def test_dmi_vanishes_on_uniform_periodic(self):
        lat = seed_texture("uniform_up", 10, 10, boundary="periodic")
        with_d = effective_field(lat, PARAMS, 3.0)
        without = effective_field(lat, PARAMS.replace(dmi_d=0.0), 3.0)
        assert np.array_equal(with_d, without)

    @pytest.mark.parametrize("boundary", ["open", "periodic"])
    def test_matches_finite_difference(self, rng, boundary):
        lat = SpinLattice(random_unit_spins(rng, 8, 8), boundary=boundary)
        H = effective_field(lat, PARAMS, 5.0)
        g = fd_gradient(lat, PARAMS, 5.0)
        assert np.linalg.norm(H + g) <= 1e-6 * np.linalg.norm(g)

    @given(st.integers(0, 2**31 - 1), st.sampled_from(["open", "periodic"]), st.floats(-50, 50))
    def test_gradient_consistency_property(self, seed, boundary, h):
        rng = np.random.default_rng(seed)
        lat = SpinLattice(random_unit_spins(rng, 8, 8), boundary=boundary)
        p = MaterialParams(dmi_d=rng.uniform(0, 1), anisotropy_k=rng.uniform(0, 0.5))
        H = effective_field(lat, p, h)
        g = fd_gradient(lat, p, h)
        assert np.linalg.norm(H + g) <= 1e-6 * np.linalg.norm(g)


class TestEnergy:
    def test_uniform_closed_form(self):
        lat = seed_texture("uniform_up", 8, 8)
        p = PARAMS.replace(dmi_d=0.0)
        bonds = 2 * 8 * 7
        assert total_energy(lat, p, 0.0) == pytest.approx(-p.exchange_j * bonds - 64 * p.anisotropy_k, abs=1e-12)

    def test_single_flip_raises_energy(self):
        lat = seed_texture("uniform_up", 8, 8)
        p = PARAMS.replace(dmi_d=0.0)
        flipped = lat.copy()
        flipped.spins[4, 4] = (0, 0, -1)
        assert total_energy(flipped, p, 0.0) > total_energy(lat, p, 0.0)

    @pytest.mark.parametrize("periodic", [False, True])
    def test_skyrmion_matches_brute_force(self, periodic):
        lat = seed_texture("skyrmion", 16, 16, center=(7.5, 7.5), radius=5, boundary="periodic" if periodic else "open")
        e = total_energy(lat, PARAMS, 7.0)
        assert e == pytest.approx(brute_energy(lat.spins, PARAMS, 7.0, periodic), rel=1e-12)

    def test_terms_sum_to_total(self, rng):
        lat = SpinLattice(random_unit_spins(rng, 9, 11))
        assert sum(energy_terms(lat, PARAMS, 2.0).values()) == total_energy(lat, PARAMS, 2.0)

    @given(st.integers(0, 2**31 - 1), st.floats(-100, 100))
    def test_flip_symmetry(self, seed, h):
        # m -> -m with h -> -h leaves exchange, anisotropy, Zeeman and the bilinear DMI unchanged
        rng = np.random.default_rng(seed)
        lat = SpinLattice(random_unit_spins(rng, 8, 8), boundary=Boundary.PERIODIC)
        assert total_energy(lat.flipped(), PARAMS, -h) == pytest.approx(total_energy(lat, PARAMS, h), abs=1e-10)


class TestDynamics:
    def test_uniform_fixed_point(self):
        # periodic: open edges cant the spins through the DMI boundary term
        lat = SpinLattice(seed_texture("uniform_up", 12, 12).spins, boundary=Boundary.PERIODIC)
        p = PARAMS.replace(temperature=0.0)
        out = lat
        for _ in range(20):
            nxt = llg_step(out, p, 10.0)
            assert np.max(np.abs(nxt.spins - out.spins)) < 1e-10
            out = nxt

    def test_energy_monotone_at_zero_temperature(self, rng):
        lat = SpinLattice(random_unit_spins(rng, 12, 12))
        p = PARAMS.replace(damping_alpha=0.3)
        m = lat.components()
        e_prev = total_energy(lat, p, 4.0)
        for _ in range(60):
            evolve(m, p, 4.0, 1, None)
            e = total_energy(lat.with_components(m), p, 4.0)
            assert e <= e_prev + 1e-9
            e_prev = e

    @given(st.integers(0, 2**31 - 1), st.integers(1, 40))
    def test_norm_preserved(self, seed, n):
        rng = np.random.default_rng(seed)
        m = SpinLattice(random_unit_spins(rng, 8, 8)).components()
        evolve(m, PARAMS.replace(temperature=0.01), 3.0, n, rng_stream(seed))
        assert np.max(np.abs(np.linalg.norm(m, axis=0) - 1)) < 1e-9

    def test_macrospin_closed_form(self):
        # uniform tilted state, D = K = 0: exchange is parallel to m, so each spin precesses in b z
        p = MaterialParams(dmi_d=0.0, anisotropy_k=0.0, field_scale=0.01, damping_alpha=0.2, dt=0.01)
        h = 100.0
        b = p.field_scale * h
        th0, ph0 = 0.7, 0.3
        spins = np.zeros((8, 8, 3))
        spins[...] = (math.sin(th0) * math.cos(ph0), math.sin(th0) * math.sin(ph0), math.cos(th0))
        m = SpinLattice(spins).components()
        evolve(m, p, h, 100, None)
        t = 100 * p.dt
        th = 2 * math.atan(math.tan(th0 / 2) * math.exp(-p.damping_alpha * b * t))
        ph = ph0 + b * t
        expect = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
        assert np.max(np.abs(m[:, 3, 3] - expect)) < 1e-4
        assert np.max(np.abs(m - m[:, :1, :1])) < 1e-12

    def test_stability_assertion(self):
        with pytest.raises(StabilityViolation):
            MaterialParams(dt=0.05)
        m = seed_texture("uniform_up", 8, 8).components()
        with pytest.raises(StabilityViolation):
            evolve(m, MaterialParams(dt=0.012, field_scale=1.0), 5.0, 1, None)

    def test_deterministic_streams(self, rng):
        lat = SpinLattice(random_unit_spins(rng, 10, 10))
        p = PARAMS.replace(temperature=0.05)
        a, b = lat.components(), lat.components()
        evolve(a, p, 1.0, 150, rng_stream(7, 3))
        evolve(b, p, 1.0, 150, rng_stream(7, 3))
        assert np.array_equal(a, b)
        c = lat.components()
        evolve(c, p, 1.0, 150, rng_stream(7, 4))
        assert not np.array_equal(a, c)

    def test_noise_blocks_do_not_change_trajectory(self, rng):
        lat = SpinLattice(random_unit_spins(rng, 8, 8))
        p = PARAMS.replace(temperature=0.05)
        a, b = lat.components(), lat.components()
        evolve(a, p, 1.0, 130, rng_stream(1))
        r = rng_stream(1)
        for n in (64, 64, 2):
            evolve(b, p, 1.0, n, r)
        assert np.array_equal(a, b)


class TestTextures:
    def test_uniform_up(self):
        lat = seed_texture("uniform_up", 8, 8)
        assert np.array_equal(lat.spins[..., 2], np.ones((8, 8)))

    def test_skyrmion_profile(self):
        lat = seed_texture("skyrmion", 64, 64, center=(32, 32), radius=8)
        assert np.allclose(lat.spins[32, 32], (0, 0, -1))
        x, y = np.meshgrid(np.arange(64) - 32, np.arange(64) - 32, indexing="ij")
        assert np.all(lat.spins[np.hypot(x, y) > 8] == (0, 0, 1))

    def test_skyrmion_charge(self):
        lat = seed_texture("skyrmion", 64, 64, center=(31.5, 31.5), radius=8)
        assert topological_charge(lat) == pytest.approx(-1, abs=1e-2)

    def test_geometry_errors(self):
        with pytest.raises(GeometryError):
            seed_texture("uniform_up", 4, 64)
        with pytest.raises(GeometryError):
            seed_texture("skyrmion", 16, 16, center=(2, 8), radius=5)
        with pytest.raises(GeometryError):
            place_skyrmion(np.zeros((16, 16, 3)), (8, 8), 1.0)

    def test_unit_norm_required(self):
        with pytest.raises(ValueError):
            SpinLattice(np.ones((8, 8, 3)))

    def test_snapshot_round_trip(self, tmp_path, rng):
        lat = SpinLattice(random_unit_spins(rng, 9, 8), cell_size=0.5, boundary="periodic")
        save_snapshot(tmp_path / "s.csv", lat, PARAMS)
        back, params = load_snapshot(tmp_path / "s.csv")
        assert np.array_equal(back.spins, lat.spins)
        assert back.boundary is Boundary.PERIODIC and params == PARAMS

    def test_snapshot_bad_header(self, tmp_path):
        (tmp_path / "s.csv").write_text("x,y,mx,my,mz\n")
        with pytest.raises(FormatError):
            load_snapshot(tmp_path / "s.csv")
