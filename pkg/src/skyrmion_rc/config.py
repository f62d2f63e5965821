"""Run configuration: TOML schema, validation with line numbers, object builders."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import SKYRMION_MAX_AREA, SV_THRESHOLD, PROBE_TIME
from .backends import DEVICE_PRESETS, LinearMockBackend, MicromagneticConfig, SurrogateParams
from .encoding import MNIST_CROP_COLS, MNIST_CROP_ROWS
from .errors import ConfigError
from .readout import DEFAULT_RIDGE_SCALE
from .harness import SNAPSHOT_INTERVAL, SubsectionSpec, hconst_grid
from .texture import MaterialParams

SCHEMA_VERSION = 1
DATA_ENV = "SKYRC_DATA"
TASKS = ("waveform", "mnist", "sweep", "probe")
BACKEND_KINDS = ("surrogate", "micromagnetic", "mock")
PROBES = ("memory", "nonlinearity", "fading", "dimensionality", "drift")

_MATERIAL_KEYS = {f.name for f in fields(MaterialParams)}
_GRID_KEYS = {f.name for f in fields(MicromagneticConfig)} - {"params"}
_SURROGATE_KEYS = {f.name for f in fields(SurrogateParams)}

_SECTIONS = {
    "run": {"task", "seed", "out", "workers"},
    "backend": {"kind", "device", "gain"} | _MATERIAL_KEYS | _GRID_KEYS | _SURROGATE_KEYS,
    "subsections": {"count", "h_const", "h_const_min", "h_const_max", "amplitudes", "amplitude_groups"},
    "encoding": {
        "segments", "period", "amplitude", "seed", "drive_rate", "sample_rate",
        "images", "labels", "data_root", "drive_frequency", "crop_rows", "crop_cols", "order", "n_images",
    },
    "readout": {"ridge_lambda", "ridge_scale", "train_n", "test_n", "repeats", "split_seed", "shuffled_control"},
    "sweep": {"devices", "dmi_values", "amplitudes", "snapshot_interval"},
    "probe": {
        "name", "h_const", "amplitude", "amplitudes", "probe_time", "period", "lead", "budget",
        "smooth", "noise_repeats", "features", "sv_threshold", "window", "regimes", "seeds",
    },
}


def _find_line(text: str, section: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the section header)."""
    lines = text.splitlines()
    current = None
    header_line = None
    for i, raw in enumerate(lines, 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if current == section:
                header_line = i
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
        if section is None and key is not None and current is None and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return header_line


@dataclass
class RunConfig:
    task: str
    seed: int
    out: Path
    workers: int
    backend: dict
    subsections: dict
    encoding: dict
    readout: dict
    sweep: dict
    probe: dict
    source: Path | None = None
    text: str = ""
    decisions: list = field(default_factory=list)

    # -------------------------------------------------------- builders

    def error(self, message, section=None, key=None) -> ConfigError:
        return ConfigError(message, _find_line(self.text, section, key))

    def backend_config(self, kind: str | None = None, index: int = 0, overrides: dict | None = None):
        b = dict(self.backend)
        if overrides:
            b.update(overrides)
        kind = kind or b.get("kind", "surrogate")
        if kind == "surrogate":
            kw = {k: v for k, v in b.items() if k in _SURROGATE_KEYS}
            gamma = kw.get("leak_gamma")
            if isinstance(gamma, list):
                kw["leak_gamma"] = float(gamma[index % len(gamma)])
            if kw.get("seed") == "per_subsection":
                kw["seed"] = index
            for name in ("input_gain", "feedback_gain", "bias"):
                if name in kw:
                    kw[name] = tuple(kw[name]) if isinstance(kw[name], list) else kw[name]
            return SurrogateParams(**kw)
        if kind == "micromagnetic":
            base = DEVICE_PRESETS[b.get("device", "A")]
            mat = {k: v for k, v in b.items() if k in _MATERIAL_KEYS}
            grid = {k: v for k, v in b.items() if k in _GRID_KEYS and k not in _MATERIAL_KEYS}
            grid.pop("seed", None)
            return MicromagneticConfig(params=base.replace(**mat), seed=int(b.get("seed", 0)), **grid)
        if kind == "mock":
            return LinearMockBackend(float(b.get("gain", 1.0)))
        raise self.error(f"unknown backend kind {kind!r}", "backend", "kind")

    def h_const_values(self) -> np.ndarray:
        s = self.subsections
        if "h_const" in s:
            return np.asarray(s["h_const"], dtype=float)
        return hconst_grid(int(s.get("count", 0)), float(s.get("h_const_min", -1.6)), float(s.get("h_const_max", 1.6)))

    def amplitudes(self, n: int) -> list:
        s = self.subsections
        if "amplitude_groups" in s:
            out = []
            for amp, count in s["amplitude_groups"]:
                out += [float(amp)] * int(count)
            return out
        if "amplitudes" in s:
            return [None if a is None else float(a) for a in s["amplitudes"]]
        return [None] * n

    def subsection_specs(self, kind: str | None = None, overrides: dict | None = None) -> list[SubsectionSpec]:
        h = self.h_const_values()
        amps = self.amplitudes(len(h))
        return [
            SubsectionSpec(float(hc), self.backend_config(kind, i, overrides), amps[i])
            for i, hc in enumerate(h)
        ]

    def data_path(self, name: str) -> Path:
        p = Path(name)
        if p.is_absolute():
            return p
        env = os.environ.get(DATA_ENV)
        if env:
            return Path(env) / p
        root = Path(self.encoding.get("data_root", "."))
        base = self.source.parent if self.source else Path.cwd()
        return (base / root / p) if not root.is_absolute() else root / p

    def ridge_scale(self) -> float:
        return float(self.readout.get("ridge_scale", DEFAULT_RIDGE_SCALE))

    def ridge_lambda(self):
        lam = self.readout.get("ridge_lambda", "default")
        return None if lam == "default" else float(lam)

    def as_dict(self) -> dict:
        return {
            "task": self.task,
            "seed": self.seed,
            "backend": self.backend,
            "subsections": self.subsections,
            "encoding": self.encoding,
            "readout": self.readout,
            "sweep": self.sweep,
            "probe": self.probe,
        }


def parse_config(text: str, source=None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"syntax error: {exc}", int(m.group(1)) if m else None) from exc
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}", _find_line(text, None, "schema_version"))
    for name, value in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]", _find_line(text, name, None))
        if not isinstance(value, dict):
            raise ConfigError(f"{name} must be a section", _find_line(text, None, name))
        for key in value:
            if key not in _SECTIONS[name]:
                raise ConfigError(f"unknown key '{key}' in [{name}]", _find_line(text, name, key))
    run = data.get("run", {})
    cfg = RunConfig(
        task=run.get("task", ""),
        seed=run.get("seed", 0),
        out=Path(run.get("out", "runs/out")),
        workers=run.get("workers", 0),
        backend=data.get("backend", {"kind": "surrogate"}),
        subsections=data.get("subsections", {}),
        encoding=data.get("encoding", {}),
        readout=data.get("readout", {}),
        sweep=data.get("sweep", {}),
        probe=data.get("probe", {}),
        source=Path(source) if source else None,
        text=text,
    )
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), path)


def _check(cond, cfg, message, section, key):
    if not cond:
        raise cfg.error(message, section, key)


def validate(cfg: RunConfig) -> RunConfig:
    """Schema and invariant checks; fills ``cfg.decisions`` with defaults in effect."""
    e = cfg.error
    _check(cfg.task in TASKS, cfg, f"run.task must be one of {TASKS}, got {cfg.task!r}", "run", "task")
    _check(isinstance(cfg.seed, int) and cfg.seed >= 0, cfg, "run.seed must be a non-negative integer", "run", "seed")
    _check(isinstance(cfg.workers, int) and cfg.workers >= 0, cfg, "run.workers must be >= 0", "run", "workers")

    kind = cfg.backend.get("kind", "surrogate")
    _check(kind in BACKEND_KINDS, cfg, f"backend.kind must be one of {BACKEND_KINDS}, got {kind!r}", "backend", "kind")
    if "device" in cfg.backend:
        _check(cfg.backend["device"] in DEVICE_PRESETS, cfg, f"unknown device {cfg.backend['device']!r}", "backend", "device")

    if cfg.task in ("waveform", "mnist", "sweep") or (cfg.task == "probe" and cfg.probe.get("name") in ("dimensionality", "drift") and "features" not in cfg.probe):
        _check(cfg.subsections, cfg, "subsection table is empty", "subsections", None)
        if "h_const" in cfg.subsections:
            h = cfg.subsections["h_const"]
            _check(isinstance(h, list) and len(h) > 0, cfg, "subsections.h_const must be a non-empty list", "subsections", "h_const")
            _check(all(isinstance(v, (int, float)) and np.isfinite(v) for v in h), cfg, "subsections.h_const must be finite numbers", "subsections", "h_const")
        else:
            count = cfg.subsections.get("count", 0)
            _check(isinstance(count, int) and count >= 1, cfg, "subsection table is empty (count must be >= 1)", "subsections", "count")
        n = len(cfg.h_const_values())
        if "amplitude_groups" in cfg.subsections:
            total = sum(int(c) for _, c in cfg.subsections["amplitude_groups"])
            _check(total == n, cfg, f"amplitude_groups cover {total} subsections, table has {n}", "subsections", "amplitude_groups")
        if "amplitudes" in cfg.subsections:
            _check(len(cfg.subsections["amplitudes"]) == n, cfg, "amplitudes length must match the subsection count", "subsections", "amplitudes")

    lam = cfg.readout.get("ridge_lambda", "default")
    _check(lam == "default" or (isinstance(lam, (int, float)) and lam >= 0), cfg, "readout.ridge_lambda must be >= 0 or \"default\"", "readout", "ridge_lambda")
    scale = cfg.readout.get("ridge_scale", DEFAULT_RIDGE_SCALE)
    _check(isinstance(scale, (int, float)) and scale > 0, cfg, "readout.ridge_scale must be > 0", "readout", "ridge_scale")

    if cfg.task == "mnist":
        for key in ("images", "labels"):
            _check(key in cfg.encoding, cfg, f"encoding.{key} (MNIST file) is required for the mnist task", "encoding", key)
            path = cfg.data_path(cfg.encoding[key])
            _check(path.exists(), cfg, f"MNIST file not found: {path}", "encoding", key)
        for key in ("train_n", "test_n"):
            _check(isinstance(cfg.readout.get(key), int) and cfg.readout[key] > 0, cfg, f"readout.{key} must be a positive integer", "readout", key)
        order = cfg.encoding.get("order", "row")
        _check(order in ("row", "column"), cfg, "encoding.order must be 'row' or 'column'", "encoding", "order")

    if cfg.task == "probe":
        name = cfg.probe.get("name")
        _check(name in PROBES, cfg, f"unknown probe {name!r}; expected one of {PROBES}", "probe", "name")
        if "amplitudes" in cfg.probe:
            _check(len(cfg.probe["amplitudes"]) >= 5, cfg, "probe.amplitudes needs at least 5 values", "probe", "amplitudes")
        if "features" in cfg.probe:
            base = cfg.source.parent if cfg.source else Path.cwd()
            _check((base / cfg.probe["features"]).exists(), cfg, f"feature file not found: {cfg.probe['features']}", "probe", "features")

    if cfg.task == "sweep":
        devs = cfg.sweep.get("devices", list(DEVICE_PRESETS))
        _check(all(d in DEVICE_PRESETS for d in devs), cfg, "sweep.devices must name presets A-D", "sweep", "devices")
        _check(len(cfg.sweep.get("amplitudes", [24.0])) >= 1, cfg, "sweep.amplitudes must be non-empty", "sweep", "amplitudes")

    # building the objects catches invariant violations (stability, echo-state check, ...)
    try:
        if cfg.subsections:
            cfg.subsection_specs()
        else:
            cfg.backend_config()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError, ArithmeticError) as exc:
        raise e(f"invalid backend: {exc}", "backend", None) from exc

    cfg.decisions = decisions_in_effect(cfg)
    return cfg


def decisions_in_effect(cfg: RunConfig) -> list[str]:
    """Human-readable list of modelling defaults the run relies on."""
    enc, ro, b = cfg.encoding, cfg.readout, cfg.backend
    out = []
    if cfg.subsections:
        h = cfg.h_const_values()
        src = "explicit list" if "h_const" in cfg.subsections else "evenly spaced grid"
        out.append(f"H_const grid: {len(h)} values from {h.min():+.3f} to {h.max():+.3f} Oe ({src})")
    lam = ro.get("ridge_lambda", "default")
    out.append(f"ridge lambda: {cfg.ridge_scale():g} * trace(X^T X) / F (default)" if lam == "default" else f"ridge lambda: {lam}")
    out.append("readout bias feature: appended (constant column)")
    out.append("binarization tie-break: sign(0) = +1; digit ties go to the smallest index")
    if cfg.task in ("waveform", "sweep"):
        out.append(f"waveform drive resolution: {enc.get('drive_rate', 100.0)} samples/s; sampling {enc.get('sample_rate', 100.0)} Hz")
        out.append("waveform split: first half of the segments trains, second half tests")
        out.append("waveform accuracy: per-sample and per-segment (> 50% of samples correct)")
    if cfg.task == "mnist":
        out.append(f"MNIST crop rows {tuple(enc.get('crop_rows', MNIST_CROP_ROWS))}, cols {tuple(enc.get('crop_cols', MNIST_CROP_COLS))} (half-open)")
        out.append(f"MNIST flatten order: {enc.get('order', 'row')}-major; features flattened subsection-major")
        out.append(f"MNIST sampling {enc.get('sample_rate', 80.0)} Hz over 2.2 s (176 samples); reset before every digit")
    kind = b.get("kind", "surrogate")
    if kind == "micromagnetic" or cfg.task == "sweep":
        mm = cfg.backend_config("micromagnetic")
        p = mm.params
        out.append(f"film: D={p.dmi_d}, K={p.anisotropy_k}, alpha={p.damping_alpha}, T={p.temperature}, dt={p.dt}")
        out.append(f"field scale: {p.field_scale} per Oe (24 Oe -> {24 * p.field_scale:.3g})")
        out.append(f"time map: {mm.time_scale} dimensionless units per protocol second")
        out.append(f"Hall window: central {mm.window:.0%} x {mm.window:.0%}; boundary {mm.boundary}")
        out.append(f"reset: uniform +z, {mm.pulse_field} Oe pulse, {mm.reset_texture} nucleation, {mm.equilibration_steps} relaxation steps")
    if cfg.task in ("sweep", "probe"):
        out.append(f"skyrmion size limit: {SKYRMION_MAX_AREA} um^2, m_z threshold 0, 4-connectivity")
        out.append(f"snapshot cadence: {cfg.sweep.get('snapshot_interval', SNAPSHOT_INTERVAL)} s")
        out.append(f"singular-value threshold: {cfg.probe.get('sv_threshold', SV_THRESHOLD)} of sigma_1")
        out.append(f"nonlinearity probe time: {cfg.probe.get('probe_time', PROBE_TIME)} s")
    return out
