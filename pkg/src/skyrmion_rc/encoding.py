"""Input field protocols: random sine/square waveforms and MNIST temporal encoding."""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

WAVEFORM_DRIVE_RATE = 100.0  # samples per second of protocol time
MNIST_CYCLE_SAMPLES = 20
MNIST_CROP_ROWS = (3, 25)  # rows 3..24 inclusive
MNIST_CROP_COLS = (4, 24)  # cols 4..23 inclusive

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class FieldProtocol:
    """Zero-order-hold drive: ``values[n]`` (Oe) is applied on [times[n], times[n] + dt).

    ``amplitude`` records the nominal amplitude the protocol was built with so
    that a subsection can rescale it.
    """

    times: np.ndarray
    values: np.ndarray
    amplitude: float | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be equal-length, non-empty 1D arrays")
        if t[0] != 0.0:
            raise ValueError("protocol must start at t = 0")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("protocol times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("protocol contains non-finite values")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.times.size

    @property
    def dt(self) -> float:
        """Drive sample spacing (uniform protocols only)."""
        if self.times.size == 1:
            return float("inf")
        return float(self.times[1] - self.times[0])

    @property
    def duration(self) -> float:
        return float(len(self) * self.dt) if len(self) > 1 else 0.0

    def scaled(self, amplitude: float) -> FieldProtocol:
        if not self.amplitude:
            raise ValueError("protocol has no nominal amplitude to rescale")
        return FieldProtocol(self.times, self.values * (amplitude / self.amplitude), amplitude)

    def to_csv(self, path) -> None:
        np.savetxt(
            path,
            np.column_stack([self.times, self.values]),
            delimiter=",",
            header="t,h_ac",
            comments="",
            fmt="%.17g",
        )

    @classmethod
    def from_csv(cls, path, amplitude=None) -> FieldProtocol:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], amplitude)


@dataclass(frozen=True)
class WaveformSpec:
    """Random sine/square segment train.

    ``segments`` is either an explicit list of ``"sine"``/``"square"`` or an
    integer count, in which case each segment is drawn from ``seed``.
    """

    segments: list | int
    amplitude: float = 24.0
    period: float = 1.0
    seed: int = 0
    drive_rate: float = WAVEFORM_DRIVE_RATE

    def __post_init__(self):
        if self.amplitude <= 0 or self.period <= 0 or self.drive_rate <= 0:
            raise ValueError("amplitude, period and drive_rate must be positive")
        n = self.segments if isinstance(self.segments, int) else len(self.segments)
        if n < 1:
            raise ValueError("need at least one segment")
        if not isinstance(self.segments, int):
            bad = set(self.segments) - {"sine", "square"}
            if bad:
                raise ValueError(f"unknown segment kinds {sorted(bad)}")

    def kinds(self) -> list[str]:
        if isinstance(self.segments, int):
            rng = np.random.default_rng(self.seed)
            return ["sine" if c else "square" for c in rng.integers(0, 2, self.segments)]
        return list(self.segments)


def balanced_seed(segments: int, start: int = 0, train_fraction: float = 0.5) -> int:
    """First seed >= ``start`` whose train and test halves both contain sine and square."""
    cut = int(round(segments * train_fraction))
    if not 2 <= cut <= segments - 2:
        raise ValueError("each half needs at least two segments")
    seed = start
    while True:
        kinds = WaveformSpec(segments, seed=seed).kinds()
        if len(set(kinds[:cut])) == 2 and len(set(kinds[cut:])) == 2:
            return seed
        seed += 1


def _segment(kind, n, amplitude):
    phase = np.arange(n) / n
    if kind == "sine":
        s = np.sin(2 * np.pi * phase)
        # exact zeros at 0 and T/2
        s[0] = 0.0
        if n % 2 == 0:
            s[n // 2] = 0.0
        return amplitude * s
    return np.where(phase < 0.5, amplitude, -amplitude)


def generate_waveform(spec: WaveformSpec) -> tuple[FieldProtocol, np.ndarray, list[str]]:
    """Build the drive and the per-sample labels (+1 sine, -1 square).

    Returns ``(protocol, labels, kinds)``; each segment is one full period.
    """
    per = int(round(spec.period * spec.drive_rate))
    if per < 2 or not np.isclose(per, spec.period * spec.drive_rate):
        raise ValueError("period * drive_rate must be an integer >= 2")
    kinds = spec.kinds()
    values = np.concatenate([_segment(k, per, spec.amplitude) for k in kinds])
    labels = np.repeat([1.0 if k == "sine" else -1.0 for k in kinds], per)
    times = np.arange(values.size) / spec.drive_rate
    return FieldProtocol(times, values, spec.amplitude), labels, kinds


def two_cycle_protocol(
    first: str,
    second: str,
    amplitude: float,
    period: float = 1.0,
    lead: float = 0.5,
    tail: float = 0.5,
    drive_rate: float = WAVEFORM_DRIVE_RATE,
) -> FieldProtocol:
    """Zero lead-in, two single-period segments, zero tail (probe protocols)."""
    per = int(round(period * drive_rate))
    n_lead = int(round(lead * drive_rate))
    n_tail = int(round(tail * drive_rate))
    values = np.concatenate(
        [
            np.zeros(n_lead),
            _segment(first, per, amplitude),
            _segment(second, per, amplitude),
            np.zeros(n_tail),
        ]
    )
    return FieldProtocol(np.arange(values.size) / drive_rate, values, amplitude)


# ---------------------------------------------------------------- MNIST


@dataclass(frozen=True)
class MnistImage:
    pixels: np.ndarray
    label: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.shape != (28, 28):
            raise ValueError(f"MNIST image must be 28x28, got {px.shape}")
        if px.min() < 0 or px.max() > 1:
            raise ValueError("pixel intensities must lie in [0, 1]")
        if int(self.label) not in range(10):
            raise ValueError(f"label {self.label} outside 0..9")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", int(self.label))


def crop_image(pixels, rows=MNIST_CROP_ROWS, cols=MNIST_CROP_COLS) -> np.ndarray:
    return np.asarray(pixels)[rows[0] : rows[1], cols[0] : cols[1]]


def mnist_drive_values(
    pixels: np.ndarray,
    amplitude: float,
    rows=MNIST_CROP_ROWS,
    cols=MNIST_CROP_COLS,
    order: str = "row",
) -> np.ndarray:
    """Sine-modulated drive samples for one image (or a stack of images).

    ``pixels`` may be ``(28, 28)`` or ``(n, 28, 28)``; the result has shape
    ``(8800,)`` or ``(n, 8800)``.
    """
    px = np.asarray(pixels, dtype=float)
    single = px.ndim == 2
    if single:
        px = px[None]
    block = px[:, rows[0] : rows[1], cols[0] : cols[1]]
    if order == "column":
        block = np.swapaxes(block, 1, 2)
    elif order != "row":
        raise ValueError(f"unknown flatten order {order!r}")
    flat = block.reshape(block.shape[0], -1)
    carrier = np.sin(2 * np.pi * np.arange(MNIST_CYCLE_SAMPLES) / MNIST_CYCLE_SAMPLES)
    carrier[0] = 0.0
    carrier[MNIST_CYCLE_SAMPLES // 2] = 0.0
    out = (amplitude * flat[:, :, None] * carrier).reshape(flat.shape[0], -1)
    return out[0] if single else out


def preprocess_mnist(
    image: MnistImage,
    drive_frequency: float = 200.0,
    amplitude: float = 1.0,
    rows=MNIST_CROP_ROWS,
    cols=MNIST_CROP_COLS,
    order: str = "row",
) -> FieldProtocol:
    """Crop to 22x20, flatten, and modulate each pixel onto one 20-sample sine cycle."""
    values = mnist_drive_values(image.pixels, amplitude, rows, cols, order)
    spacing = 1.0 / (MNIST_CYCLE_SAMPLES * drive_frequency)
    return FieldProtocol(np.arange(values.size) * spacing, values, amplitude)


def _open_maybe_gzip(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for an IDX header")
    found = int.from_bytes(raw[:4], "big")
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header")
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    n_bytes = int(np.prod(dims))
    if len(raw) != header + n_bytes:
        raise FormatError(f"{path}: expected {n_bytes} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``(n, 28, 28)`` uint8 array from an IDX3 file (optionally gzipped)."""
    data = _parse_idx(_open_maybe_gzip(path), IDX_IMAGES_MAGIC, path)
    if data.ndim != 3 or data.shape[1:] != (28, 28):
        raise FormatError(f"{path}: expected n x 28 x 28 images, got {data.shape}")
    return data


def read_idx_labels(path) -> np.ndarray:
    data = _parse_idx(_open_maybe_gzip(path), IDX_LABELS_MAGIC, path)
    if data.ndim != 1:
        raise FormatError(f"{path}: labels must be one-dimensional")
    if data.size and data.max() > 9:
        raise FormatError(f"{path}: label values above 9")
    return data


def load_mnist_arrays(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Pixels scaled to [0, 1] as ``(n, 28, 28)`` floats, and integer labels."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images.astype(float) / 255.0, labels.astype(int)


def load_mnist(images_path, labels_path) -> list[MnistImage]:
    pixels, labels = load_mnist_arrays(images_path, labels_path)
    return [MnistImage(p, lab) for p, lab in zip(pixels, labels)]


def write_idx(path, array: np.ndarray, magic: int) -> None:
    """Write a uint8 IDX file (gzip-compressed when ``path`` ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    buf = io.BytesIO()
    buf.write(magic.to_bytes(4, "big"))
    for d in array.shape:
        buf.write(int(d).to_bytes(4, "big"))
    buf.write(array.tobytes())
    data = buf.getvalue()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)
