"""Drive N biased subsections with one protocol and assemble the feature matrix."""

from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .backends import (
    SurrogateParams,
    backend_advance_,
    backend_reset,
    read_voltage,
    surrogate_drive_batch,
)
from .encoding import FieldProtocol
from .errors import FormatError, SkyrmionRCError

SNAPSHOT_INTERVAL = 0.05  # seconds between texture snapshots


class ReservoirRunError(SkyrmionRCError):
    """One or more subsections failed; ``failures`` maps subsection id to the error."""

    def __init__(self, failures: dict):
        self.failures = failures
        detail = "; ".join(f"{k}: {type(e).__name__}: {e}" for k, e in failures.items())
        super().__init__(f"{len(failures)} subsection(s) failed: {detail}")


@dataclass(frozen=True)
class SubsectionSpec:
    h_const: float
    backend: object
    amplitude_override: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.h_const):
            raise ValueError("h_const must be finite")


def hconst_grid(n: int, low: float = -1.6, high: float = 1.6) -> np.ndarray:
    """Evenly spaced bias values; a single subsection sits at the band centre."""
    if n < 1:
        raise ValueError("need at least one subsection")
    if n == 1:
        return np.array([(low + high) / 2])
    return np.linspace(low, high, n)


def subsection_ids(n: int) -> list[str]:
    return [f"V{i}" for i in range(n)]


@dataclass
class FeatureMatrix:
    """K sampled voltages for each of N subsections (bias column kept implicit)."""

    values: np.ndarray
    sample_times: np.ndarray
    subsection_ids: list
    includes_bias: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.sample_times = np.asarray(self.sample_times, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a K x N matrix")
        if self.values.shape != (self.sample_times.size, len(self.subsection_ids)):
            raise ValueError("values shape must match sample_times and subsection_ids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains NaN or Inf")
        self.subsection_ids = list(self.subsection_ids)

    @property
    def shape(self):
        return self.values.shape

    def design(self) -> np.ndarray:
        """Readout design matrix: values plus a ones column when ``includes_bias``."""
        if not self.includes_bias:
            return self.values
        return np.column_stack([self.values, np.ones(self.values.shape[0])])

    def flatten(self) -> np.ndarray:
        """Subsection-major flattening: all times of V0, then V1, ..."""
        return self.values.T.ravel()

    def to_csv(self, path) -> None:
        header = ["t"] + self.subsection_ids + (["bias"] if self.includes_bias else [])
        cols = [self.sample_times[:, None], self.values]
        if self.includes_bias:
            cols.append(np.ones((self.values.shape[0], 1)))
        np.savetxt(path, np.hstack(cols), delimiter=",", header=",".join(header), comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> FeatureMatrix:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise FormatError(f"{path}: first column must be 't'")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != len(header):
            raise FormatError(f"{path}: header has {len(header)} fields, rows have {data.shape[1]}")
        bias = header[-1] == "bias"
        ids = header[1:-1] if bias else header[1:]
        return cls(data[:, 1 : 1 + len(ids)], data[:, 0], ids, bias)


@dataclass
class SubsectionResult:
    sample_times: np.ndarray
    voltages: np.ndarray
    observations: list = field(default_factory=list)


def sampling_grid(protocol: FieldProtocol, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample times t_k = k / rate over the protocol and the drive index read at each.

    The voltage at t_k is read before drive sample ``round(t_k / dt)`` is
    applied, i.e. after everything earlier has acted on the state.
    """
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    k = int(round(protocol.duration * sample_rate))
    times = np.arange(k) / sample_rate
    idx = np.minimum(np.rint(times / protocol.dt).astype(np.int64), len(protocol) - 1)
    return times, idx


def _drive(spec: SubsectionSpec, protocol: FieldProtocol) -> FieldProtocol:
    if spec.amplitude_override is None:
        return protocol
    return protocol.scaled(spec.amplitude_override)


def run_subsection(
    spec: SubsectionSpec,
    protocol: FieldProtocol,
    sample_rate: float,
    *,
    seed: int = 0,
    index: int = 0,
    observer: Callable | None = None,
    observer_interval: float = SNAPSHOT_INTERVAL,
) -> SubsectionResult:
    """Reset, drive sample by sample, and read the voltage on the sampling grid.

    ``observer(state)`` is called every ``observer_interval`` seconds of
    protocol time (on the drive grid); its return values are collected.
    """
    if len(protocol) == 0:
        raise ValueError("protocol is empty")
    drive = _drive(spec, protocol)
    times, read_idx = sampling_grid(drive, sample_rate)
    if observer is None and _batchable(spec.backend, drive.dt):
        v = surrogate_drive_batch(spec.backend, spec.h_const, spec.h_const + drive.values[None], drive.dt, read_idx)
        return SubsectionResult(times, v[0])
    obs_idx = set()
    if observer is not None:
        n_obs = int(round(drive.duration / observer_interval))
        obs_idx = set(np.rint(np.arange(n_obs) * observer_interval / drive.dt).astype(int).tolist())
    state = backend_reset(spec.backend, spec.h_const, key=(seed, index))
    out = np.empty(times.size)
    observations = []
    r = 0
    dt = drive.dt
    for n, h in enumerate(drive.values):
        while r < read_idx.size and read_idx[r] == n:
            out[r] = read_voltage(state)
            r += 1
        if n in obs_idx:
            observations.append(observer(state))
        backend_advance_(state, spec.h_const + h, dt)
    return SubsectionResult(times, out, observations)


def _batchable(backend, drive_dt) -> bool:
    if not isinstance(backend, SurrogateParams):
        return False
    per = backend.update_rate * drive_dt
    return round(per) >= 1 and abs(per - round(per)) <= 1e-9


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [_capture(fn, x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda x: _capture(fn, x), items))


def _capture(fn, x):
    try:
        return fn(x), None
    except Exception as exc:  # collected and re-raised with subsection ids
        return None, exc


def run_reservoir(
    specs: list,
    protocol: FieldProtocol,
    sample_rate: float,
    *,
    seed: int = 0,
    workers: int = 1,
    include_bias: bool = True,
    observer: Callable | None = None,
    observer_interval: float = SNAPSHOT_INTERVAL,
) -> FeatureMatrix | tuple[FeatureMatrix, list]:
    """Run every subsection and stack the columns in spec order.

    Subsection ``i`` uses the RNG streams keyed by ``(seed, i)`` so the result
    does not depend on ``workers``.  With an ``observer`` the per-subsection
    observation lists are returned alongside the matrix.
    """
    if not specs:
        raise ValueError("need at least one subsection")
    ids = subsection_ids(len(specs))
    results = _map(
        lambda i: run_subsection(
            specs[i], protocol, sample_rate, seed=seed, index=i, observer=observer, observer_interval=observer_interval
        ),
        list(range(len(specs))),
        workers,
    )
    failures = {ids[i]: err for i, (_, err) in enumerate(results) if err is not None}
    if failures:
        raise ReservoirRunError(failures)
    cols = [res.voltages for res, _ in results]
    fm = FeatureMatrix(np.column_stack(cols), results[0][0].sample_times, ids, include_bias)
    if observer is not None:
        return fm, [res.observations for res, _ in results]
    return fm


def run_reservoir_batch(
    specs: list,
    drive_values: np.ndarray,
    drive_dt: float,
    sample_rate: float,
    *,
    seed: int = 0,
    workers: int = 1,
    nominal_amplitude: float = 1.0,
) -> np.ndarray:
    """Features for many protocols sharing one time grid, shape ``(B, K, N)``.

    ``drive_values`` is ``(B, S)``.  Surrogate subsections use the batched
    node kernel; other backends fall back to one ``run_subsection`` per row.
    Each protocol starts from a fresh reset.
    """
    drive_values = np.atleast_2d(np.asarray(drive_values, dtype=float))
    n_batch, n_samples = drive_values.shape
    template = FieldProtocol(np.arange(n_samples) * drive_dt, np.zeros(n_samples), nominal_amplitude)
    times, read_idx = sampling_grid(template, sample_rate)

    def column(i):
        spec = specs[i]
        scale = 1.0 if spec.amplitude_override is None else spec.amplitude_override / nominal_amplitude
        if _batchable(spec.backend, drive_dt):
            return surrogate_drive_batch(spec.backend, spec.h_const, spec.h_const + scale * drive_values, drive_dt, read_idx)
        rows = []
        for b in range(n_batch):
            p = FieldProtocol(template.times, drive_values[b], nominal_amplitude)
            rows.append(run_subsection(spec, p, sample_rate, seed=seed, index=i).voltages)
        return np.array(rows)

    results = _map(column, list(range(len(specs))), workers)
    ids = subsection_ids(len(specs))
    failures = {ids[i]: err for i, (_, err) in enumerate(results) if err is not None}
    if failures:
        raise ReservoirRunError(failures)
    return np.stack([res for res, _ in results], axis=-1)


# ---------------------------------------------------------------- manifest


def _jsonable(obj):
    if is_dataclass(obj):
        d = {k: _jsonable(v) for k, v in asdict(obj).items()}
        kind = getattr(type(obj), "kind", None)
        if kind is not None:
            d = {"kind": kind, **d}
        return d
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_hash(obj) -> str:
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    """Inputs that pin a run down, plus timing (timing is informational only)."""

    config_hash: str
    seed: int
    backend_kinds: list
    subsections: list
    software_version: str = __version__
    python: str = field(default_factory=platform.python_version)
    numpy: str = field(default_factory=lambda: np.__version__)
    timing: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config, seed: int, specs: list, **extra) -> RunManifest:
        return cls(
            config_hash=config_hash(config),
            seed=int(seed),
            backend_kinds=sorted({getattr(type(s.backend), "kind", type(s.backend).__name__) for s in specs}),
            subsections=[
                {"id": i, "h_const": s.h_const, "amplitude_override": s.amplitude_override}
                for i, s in zip(subsection_ids(len(specs)), specs)
            ],
            extra=_jsonable(extra),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text()))


@contextmanager
def timed(timing: dict, name: str):
    """Record the wall-clock duration of the block in ``timing[name]``."""
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timing[name] = round(time.perf_counter() - t0, 3)
