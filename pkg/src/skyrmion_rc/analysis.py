"""Texture statistics and reservoir characterisation probes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .backends import backend_advance_, backend_reset, read_voltage
from .encoding import WAVEFORM_DRIVE_RATE, FieldProtocol, two_cycle_protocol
from .errors import DegenerateInput
from .harness import FeatureMatrix
from .texture import SpinLattice

SKYRMION_MAX_AREA = 36.0  # um^2, particles below 6 x 6 um^2 count as skyrmions
SV_THRESHOLD = 0.01
PROBE_TIME = 2.5  # s
REFERENCE_CORRELATION = 0.82  # reference only


# ---------------------------------------------------------------- textures


@dataclass
class TextureReport:
    skyrmion_count: int
    mean_mz: float
    topological_charge: float
    particle_sizes: list

    def to_dict(self):
        return asdict(self)


def _merge_periodic(labels: np.ndarray, n: int) -> np.ndarray:
    """Relabel so components touching across periodic edges share one label."""
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a_edge, b_edge in ((labels[0, :], labels[-1, :]), (labels[:, 0], labels[:, -1])):
        for a, b in zip(a_edge, b_edge):
            if a and b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n + 1)])
    return roots[labels]


def label_reversed(lattice: SpinLattice, mz_threshold: float = 0.0) -> tuple[np.ndarray, list[int]]:
    """4-connected labels of cells with m_z below the threshold, and their ids."""
    mask = lattice.spins[..., 2] < mz_threshold
    labels, n = ndimage.label(mask)
    if lattice.periodic and n:
        labels = _merge_periodic(labels, n)
    ids = sorted(set(np.unique(labels).tolist()) - {0})
    return labels, ids


def count_skyrmions(
    lattice: SpinLattice, mz_threshold: float = 0.0, max_size_um2: float = SKYRMION_MAX_AREA
) -> TextureReport:
    """Binarize on m_z, label 4-connected particles, count those below the area limit."""
    labels, ids = label_reversed(lattice, mz_threshold)
    cell_area = lattice.cell_size**2
    cells = ndimage.sum_labels(np.ones(labels.shape), labels, ids) if ids else np.array([])
    sizes = [float(c * cell_area) for c in np.atleast_1d(cells)]
    return TextureReport(
        skyrmion_count=int(sum(s < max_size_um2 for s in sizes)),
        mean_mz=float(np.mean(lattice.spins[..., 2])),
        topological_charge=topological_charge(lattice),
        particle_sizes=sizes,
    )


def _solid_angle(a, b, c):
    """Signed solid angle of spherical triangles (Berg-Luescher)."""
    num = np.einsum("...i,...i->...", a, np.cross(b, c))
    den = 1 + np.einsum("...i,...i->...", a, b) + np.einsum("...i,...i->...", b, c) + np.einsum("...i,...i->...", c, a)
    return 2 * np.arctan2(num, den)


def topological_charge(lattice: SpinLattice) -> float:
    """Q = (1/4 pi) * sum of signed solid angles over two triangles per plaquette."""
    m = lattice.spins
    if lattice.periodic:
        m10 = np.roll(m, -1, axis=0)
        m01 = np.roll(m, -1, axis=1)
        m11 = np.roll(m10, -1, axis=1)
        m00 = m
    else:
        m00, m10, m01, m11 = m[:-1, :-1], m[1:, :-1], m[:-1, 1:], m[1:, 1:]
    omega = _solid_angle(m00, m10, m11) + _solid_angle(m00, m11, m01)
    return float(np.sum(omega) / (4 * np.pi))


def mean_skyrmion_density(snapshots, hall_bar_area: float, duration: float | None = None) -> float:
    """Time-averaged skyrmion count per um^2.

    ``snapshots`` may hold counts, :class:`TextureReport` objects or lattices.
    Snapshots are equally spaced, so the time average is their mean and
    ``duration`` does not enter the result.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("need at least one snapshot")
    if hall_bar_area <= 0:
        raise ValueError("hall_bar_area must be positive")
    counts = []
    for s in snapshots:
        if isinstance(s, TextureReport):
            counts.append(s.skyrmion_count)
        elif isinstance(s, SpinLattice):
            counts.append(count_skyrmions(s).skyrmion_count)
        else:
            counts.append(float(s))
    return float(np.mean(counts)) / hall_bar_area


def skyrmion_counter(mz_threshold: float = 0.0, max_size_um2: float = SKYRMION_MAX_AREA):
    """Observer for the harness: counts skyrmions of a micromagnetic state."""

    def observe(state):
        return count_skyrmions(state.lattice(), mz_threshold, max_size_um2).skyrmion_count

    return observe


# ---------------------------------------------------------------- probes


def drive_trace(
    backend, h_const: float, protocol: FieldProtocol, *, key=(0, 0), noise_key=()
) -> np.ndarray:
    """V read before every drive sample of ``protocol`` (one value per sample)."""
    state = backend_reset(backend, h_const, key=key, noise_key=noise_key)
    out = np.empty(len(protocol))
    for n, h in enumerate(protocol.values):
        out[n] = read_voltage(state)
        backend_advance_(state, h_const + h, protocol.dt)
    return out


def _nrms(a, b, ref):
    scale = np.std(ref)
    diff = np.sqrt(np.mean((a - b) ** 2))
    if scale == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / scale)


@dataclass
class MemoryProbeResult:
    times: np.ndarray
    v_sine_sine: np.ndarray
    v_square_sine: np.ndarray
    divergence: float
    noise_floor: float
    second_cycle: tuple

    def summary(self) -> dict:
        ratio = self.divergence / self.noise_floor if self.noise_floor > 0 else None
        return {"divergence": self.divergence, "noise_floor": self.noise_floor, "ratio": ratio}


def memory_probe(
    backend,
    h_const: float,
    amplitude: float,
    period: float = 1.0,
    lead: float = 0.5,
    drive_rate: float = WAVEFORM_DRIVE_RATE,
    key=(0, 0),
    noise_repeats: int = 1,
) -> MemoryProbeResult:
    """Sine-sine vs square-sine from identical resets, compared over the second cycle.

    Divergence is the RMS difference of the two second-cycle traces divided
    by the standard deviation of the sine-sine trace over the whole drive.
    Voltages are read before each sample is applied, so the second-cycle
    window is shifted by one sample and a one-sample tail is appended.
    The noise floor is the same statistic between sine-sine runs that differ
    only in their thermal stream (zero for deterministic backends).
    """
    tail = 1.0 / drive_rate
    p_ss = two_cycle_protocol("sine", "sine", amplitude, period, lead, tail, drive_rate)
    p_qs = two_cycle_protocol("square", "sine", amplitude, period, lead, tail, drive_rate)
    v_ss = drive_trace(backend, h_const, p_ss, key=key)
    v_qs = drive_trace(backend, h_const, p_qs, key=key)
    per = int(round(period * drive_rate))
    start = int(round(lead * drive_rate))
    second = slice(start + per + 1, start + 2 * per + 1)
    ref = v_ss[start:]
    divergence = _nrms(v_ss[second], v_qs[second], ref)
    floors = []
    for r in range(noise_repeats):
        v_alt = drive_trace(backend, h_const, p_ss, key=key, noise_key=(r + 1,))
        floors.append(_nrms(v_ss[second], v_alt[second], ref))
    return MemoryProbeResult(p_ss.times, v_ss, v_qs, divergence, float(np.max(floors)), (second.start, second.stop))


@dataclass
class NonlinearityResult:
    amplitudes: np.ndarray
    responses: np.ndarray  # V(probe) - V(rest)
    voltages: np.ndarray
    slope: float
    relative_residual: float
    nonlinear: bool
    sign_change: bool

    def table(self) -> np.ndarray:
        return np.column_stack([self.amplitudes, self.voltages, self.responses])


def nonlinearity_probe(
    backend,
    h_const: float,
    amplitudes,
    probe_time: float = PROBE_TIME,
    period: float = 1.0,
    lead: float = 0.5,
    drive_rate: float = WAVEFORM_DRIVE_RATE,
    threshold: float = 0.05,
    key=(0, 0),
) -> NonlinearityResult:
    """Two-cycle sine at each amplitude; V at ``probe_time`` against a fit through the origin.

    The response is V(probe_time) minus the resting V at t = 0.
    """
    amps = np.asarray(amplitudes, dtype=float)
    if amps.size < 5:
        raise ValueError("need at least 5 amplitudes")
    tail = max(0.0, probe_time - lead - 2 * period) + 1.0 / drive_rate
    idx = int(round(probe_time * drive_rate))
    volts, resp = [], []
    for a in amps:
        p = two_cycle_protocol("sine", "sine", a, period, lead, tail, drive_rate)
        v = drive_trace(backend, h_const, p, key=key)
        volts.append(v[idx])
        resp.append(v[idx] - v[0])
    volts, resp = np.array(volts), np.array(resp)
    slope = float(amps @ resp / (amps @ amps))
    norm = np.linalg.norm(resp)
    rel = float(np.linalg.norm(resp - slope * amps) / norm) if norm > 0 else 0.0
    nz = resp[np.abs(resp) > 1e-12 * max(norm, 1e-300)]
    return NonlinearityResult(
        amps, resp, volts, slope, rel, rel > threshold, bool(nz.size and (nz.min() < 0 < nz.max()))
    )


@dataclass
class FadingResult:
    times: np.ndarray
    voltages: np.ndarray
    v_initial: float
    peak_deviation: float
    drive_end: float
    horizon: float | None  # seconds after the drive ends; None = not reached

    def summary(self) -> dict:
        return {
            "v_initial": self.v_initial,
            "peak_deviation": self.peak_deviation,
            "drive_end": self.drive_end,
            "horizon": self.horizon,
            "reached": self.horizon is not None,
        }


def fading_probe(
    backend,
    h_const: float,
    amplitude: float = 24.0,
    period: float = 1.0,
    lead: float = 0.5,
    budget: float = 20.0,
    drive_rate: float = WAVEFORM_DRIVE_RATE,
    tolerance: float = 0.01,
    smooth: int = 1,
    key=(0, 0),
) -> FadingResult:
    """Two sine cycles, then zero drive for ``budget`` seconds.

    V_initial is the mean over the lead-in.  The horizon is the first time
    after the drive at which the (optionally moving-averaged) deviation drops
    below ``tolerance`` times the peak deviation.
    """
    p = two_cycle_protocol("sine", "sine", amplitude, period, lead, budget, drive_rate)
    v = drive_trace(backend, h_const, p, key=key)
    n_lead = max(1, int(round(lead * drive_rate)))
    v0 = float(np.mean(v[:n_lead]))
    dev = np.abs(v - v0)
    peak = float(dev.max())
    end = n_lead + 2 * int(round(period * drive_rate))
    post = dev[end:]
    if smooth > 1:
        post = np.convolve(post, np.ones(smooth) / smooth, mode="valid")
    hit = np.nonzero(post < tolerance * peak)[0] if peak > 0 else np.array([0])
    horizon = float(hit[0] / drive_rate) if hit.size else None
    return FadingResult(p.times, v, v0, peak, end / drive_rate, horizon)


# ---------------------------------------------------------------- features


@dataclass
class DimensionalityReport:
    singular_values: np.ndarray
    effective_rank: int
    threshold: float
    pairwise_curves: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "singular_values": self.singular_values.tolist(),
            "effective_rank": self.effective_rank,
            "threshold": self.threshold,
        }


def effective_rank(singular_values, threshold: float = SV_THRESHOLD) -> int:
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s > threshold * s[0]))


def pairwise_curves(features: FeatureMatrix, reference: int | None = 0) -> dict:
    """(V_i, V_j) tables keyed ``V_i_vs_V_j``; all pairs when ``reference`` is None."""
    ids = features.subsection_ids
    n = len(ids)
    if reference is None:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        pairs = [(i, reference) for i in range(n) if i != reference]
    return {f"{ids[i]}_vs_{ids[j]}": features.values[:, [i, j]] for i, j in pairs}


def dimensionality_report(
    features: FeatureMatrix, sv_threshold: float = SV_THRESHOLD, reference: int | None = 0
) -> DimensionalityReport:
    """Singular values of the column-centred matrix and the count above threshold."""
    X = features.values
    if X.shape[0] <= X.shape[1]:
        raise ValueError("need more samples than subsections")
    s = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    return DimensionalityReport(s, effective_rank(s, sv_threshold), sv_threshold, pairwise_curves(features, reference))


def write_pairwise(report: DimensionalityReport, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, table in report.pairwise_curves.items():
        a, b = name.split("_vs_")
        path = directory / f"{name}.csv"
        np.savetxt(path, table, delimiter=",", header=f"{a},{b}", comments="", fmt="%.17g")
        paths.append(path)
    return paths


def drift_probe(features: FeatureMatrix | np.ndarray, window: int = 100, sample_times=None) -> np.ndarray:
    """Per-column slope of the moving-average baseline, divided by oscillation amplitude.

    The baseline is a ``window``-sample moving average (one drive period
    removes a periodic component exactly).  The amplitude is sqrt(2) times
    the RMS of the column about its baseline, which equals the amplitude of
    a pure sinusoid.  Slopes are per second when times are known.
    """
    if isinstance(features, FeatureMatrix):
        X, t = features.values, features.sample_times
    else:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if X.shape[0] == 1:
            X = X.T
        t = np.arange(X.shape[0]) if sample_times is None else np.asarray(sample_times, dtype=float)
    if X.shape[0] < 100:
        raise ValueError("need at least 100 samples")
    if window < 1 or window > X.shape[0] // 2:
        raise ValueError("window must be between 1 and half the series length")
    kernel = np.ones(window) / window
    tc = np.convolve(t, kernel, mode="valid")
    slopes = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        base = np.convolve(X[:, j], kernel, mode="valid")
        slope = np.polyfit(tc, base, 1)[0]
        lo = (window - 1) // 2
        resid = X[lo : lo + base.size, j] - base
        amp = np.sqrt(2) * np.sqrt(np.mean(resid**2))
        slopes[j] = slope / amp if amp > 0 else 0.0
    return slopes


def count_accuracy_correlation(runs) -> float:
    """Pearson r over (density, accuracy) pairs."""
    pts = np.asarray(list(runs), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise DegenerateInput("need at least 3 (density, accuracy) pairs")
    x, y = pts[:, 0] - pts[:, 0].mean(), pts[:, 1] - pts[:, 1].mean()
    sx, sy = np.sqrt(x @ x), np.sqrt(y @ y)
    if sx == 0 or sy == 0:
        raise DegenerateInput("a coordinate has zero variance")
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


def write_json(path, obj) -> None:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        raise TypeError(type(o).__name__)

    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n")
