"""Command-line front end: ``skyrc run | probe | validate``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import analysis
from .backends import DEVICE_PRESETS
from .config import DATA_ENV, PROBES, RunConfig, load_config
from .encoding import WaveformSpec, generate_waveform, load_mnist_arrays, mnist_drive_values
from .errors import ConfigError
from .harness import SNAPSHOT_INTERVAL, FeatureMatrix, RunManifest, run_reservoir, run_reservoir_batch, sampling_grid, timed
from .readout import evaluate_mnist, evaluate_waveform, save_weights
from .texture import rng_stream

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


def _out_dir(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


# ---------------------------------------------------------------- tasks


def waveform_features(cfg: RunConfig, specs, amplitude=None, observer=None):
    """Run the configured waveform drive; returns protocol, sampled labels, kinds, samples per segment, result."""
    enc = cfg.encoding
    spec = WaveformSpec(
        segments=enc.get("segments", 50),
        amplitude=float(amplitude if amplitude is not None else enc.get("amplitude", 24.0)),
        period=float(enc.get("period", 1.0)),
        seed=int(enc.get("seed", cfg.seed)),
        drive_rate=float(enc.get("drive_rate", 100.0)),
    )
    protocol, labels, kinds = generate_waveform(spec)
    rate = float(enc.get("sample_rate", 100.0))
    interval = float(cfg.sweep.get("snapshot_interval", SNAPSHOT_INTERVAL))
    result = run_reservoir(
        specs, protocol, rate, seed=cfg.seed, workers=_workers(cfg), observer=observer, observer_interval=interval
    )
    _, idx = sampling_grid(protocol, rate)
    per_segment = int(round(spec.period * rate))
    return protocol, labels[idx], kinds, per_segment, result


def run_waveform(cfg: RunConfig, out: Path) -> dict:
    timing = {}
    specs = cfg.subsection_specs()
    with timed(timing, "reservoir"):
        protocol, labels, kinds, per_segment, fm = waveform_features(cfg, specs)
    with timed(timing, "readout"):
        weights, report = evaluate_waveform(fm.design(), labels, per_segment, cfg.ridge_lambda())
    manifest = RunManifest.build(cfg.as_dict(), cfg.seed, specs, task="waveform", segments=kinds)
    manifest.timing = timing
    fm.to_csv(out / "features.csv")
    protocol.to_csv(out / "protocol.csv")
    np.savetxt(out / "labels.csv", labels, fmt="%d", header="label", comments="")
    save_weights(out / "weights.csv", weights, manifest.config_hash)
    result = {"task": "waveform", "n_subsections": fm.shape[1], **report.to_dict()}
    analysis.write_json(out / "report.json", result)
    manifest.to_json(out / "manifest.json")
    return result


def mnist_features(cfg: RunConfig, specs):
    enc = cfg.encoding
    pixels, labels = load_mnist_arrays(cfg.data_path(enc["images"]), cfg.data_path(enc["labels"]))
    n = int(enc.get("n_images", len(labels)))
    if n > len(labels):
        raise ConfigError(f"n_images={n} exceeds the {len(labels)} available digits")
    pick = np.sort(rng_stream(cfg.seed, 7).permutation(len(labels))[:n])
    drive_frequency = float(enc.get("drive_frequency", 200.0))
    drive = mnist_drive_values(
        pixels[pick],
        1.0,
        tuple(enc.get("crop_rows", (3, 25))),
        tuple(enc.get("crop_cols", (4, 24))),
        enc.get("order", "row"),
    )
    dt = 1.0 / (20 * drive_frequency)
    feats = run_reservoir_batch(
        specs, drive, dt, float(enc.get("sample_rate", 80.0)), seed=cfg.seed, workers=_workers(cfg)
    )
    return feats, labels[pick], dt


def run_mnist(cfg: RunConfig, out: Path) -> dict:
    timing = {}
    specs = cfg.subsection_specs()
    with timed(timing, "reservoir"):
        feats, labels, dt = mnist_features(cfg, specs)
    flat = feats.transpose(0, 2, 1).reshape(feats.shape[0], -1)
    ro = cfg.readout
    split_seed = int(ro.get("split_seed", cfg.seed))
    with timed(timing, "readout"):
        report = evaluate_mnist(
            flat, labels, int(ro["train_n"]), int(ro["test_n"]), int(ro.get("repeats", 1)), cfg.ridge_lambda(), split_seed,
            ridge_scale=cfg.ridge_scale(),
        )
        result = report.to_dict()
        if ro.get("shuffled_control", False):
            shuffled = rng_stream(split_seed, 11).permutation(labels)
            ctrl = evaluate_mnist(
                flat, shuffled, int(ro["train_n"]), int(ro["test_n"]), int(ro.get("repeats", 1)), cfg.ridge_lambda(), split_seed,
                ridge_scale=cfg.ridge_scale(),
            )
            result["shuffled_accuracy"] = ctrl.accuracy
    result["feature_shape"] = list(feats.shape[1:])
    result["flattened_length"] = int(flat.shape[1])
    manifest = RunManifest.build(cfg.as_dict(), cfg.seed, specs, task="mnist", n_images=int(len(labels)))
    manifest.timing = timing
    K = feats.shape[1]
    times = np.arange(K) / float(cfg.encoding.get("sample_rate", 80.0))
    FeatureMatrix(feats[0], times, [f"V{i}" for i in range(feats.shape[2])], False).to_csv(out / "features_digit0.csv")
    np.save(out / "features.npy", flat)
    np.savetxt(out / "labels.csv", labels, fmt="%d", header="label", comments="")
    save_weights(out / "weights.csv", report.weights, manifest.config_hash)
    analysis.write_json(out / "report.json", {"task": "mnist", **result})
    np.savetxt(out / "confusion.csv", report.confusion, delimiter=",", fmt="%d")
    manifest.to_json(out / "manifest.json")
    return result


def run_sweep(cfg: RunConfig, out: Path) -> dict:
    sw = cfg.sweep
    timing = {}
    points = []
    devices = sw.get("dmi_values") or sw.get("devices", list(DEVICE_PRESETS))
    for dev in devices:
        override = {"kind": "micromagnetic"}
        if isinstance(dev, str):
            override["device"] = dev
        else:
            override["dmi_d"] = float(dev)
        specs = cfg.subsection_specs("micromagnetic", override)
        area = specs[0].backend.nx * specs[0].backend.ny * specs[0].backend.cell_size**2
        for amp in sw.get("amplitudes", [24.0]):
            observer = analysis.skyrmion_counter()
            with timed(timing, f"{dev}@{amp}"):
                _, labels, _, per_segment, (fm, obs) = waveform_features(cfg, specs, amp, observer)
                _, report = evaluate_waveform(fm.design(), labels, per_segment, cfg.ridge_lambda())
            density = analysis.mean_skyrmion_density([c for col in obs for c in col], area)
            points.append(
                {
                    "device": dev,
                    "dmi_d": specs[0].backend.params.dmi_d,
                    "amplitude": float(amp),
                    "density": density,
                    "mean_count": density * area,
                    "sample_accuracy": report.sample_accuracy,
                    "segment_accuracy": report.segment_accuracy,
                }
            )
    rows = [[p["dmi_d"], p["amplitude"], p["density"], p["mean_count"], p["sample_accuracy"], p["segment_accuracy"]] for p in points]
    np.savetxt(
        out / "sweep.csv", np.array(rows), delimiter=",", fmt="%.10g",
        header="dmi_d,amplitude,density_per_um2,mean_count,sample_accuracy,segment_accuracy", comments="",
    )
    summary = {"points": points, "reference_r": analysis.REFERENCE_CORRELATION}
    for metric in ("sample_accuracy", "segment_accuracy"):
        try:
            summary[f"pearson_r_{metric}"] = analysis.count_accuracy_correlation([(p["density"], p[metric]) for p in points])
        except analysis.DegenerateInput as exc:
            summary[f"pearson_r_{metric}"] = None
            summary[f"note_{metric}"] = str(exc)
    summary["pearson_r"] = summary["pearson_r_sample_accuracy"]
    analysis.write_json(out / "correlation.json", summary)
    specs = cfg.subsection_specs("micromagnetic", {"kind": "micromagnetic"})
    manifest = RunManifest.build(cfg.as_dict(), cfg.seed, specs, task="sweep")
    manifest.timing = timing
    manifest.to_json(out / "manifest.json")
    return summary


def run_probe(cfg: RunConfig, name: str, out: Path) -> dict:
    if name not in PROBES:
        raise ConfigError(f"unknown probe {name!r}; expected one of {PROBES}")
    pr = cfg.probe
    h_const = float(pr.get("h_const", 1.12))
    key = (cfg.seed, 0)
    if name in ("memory", "nonlinearity", "fading"):
        backend = cfg.backend_config()
    if name == "memory":
        res = analysis.memory_probe(
            backend, h_const, float(pr.get("amplitude", 24.0)), float(pr.get("period", 1.0)),
            float(pr.get("lead", 0.5)), key=key, noise_repeats=int(pr.get("noise_repeats", 1)),
        )
        np.savetxt(out / "memory.csv", np.column_stack([res.times, res.v_sine_sine, res.v_square_sine]),
                   delimiter=",", header="t,V_sine_sine,V_square_sine", comments="", fmt="%.17g")
        summary = res.summary()
    elif name == "nonlinearity":
        amps = pr.get("amplitudes", [8.0, 16.0, 24.0, 32.0, 40.0])
        res = analysis.nonlinearity_probe(
            backend, h_const, amps, float(pr.get("probe_time", analysis.PROBE_TIME)),
            float(pr.get("period", 1.0)), float(pr.get("lead", 0.5)), key=key,
        )
        np.savetxt(out / "nonlinearity.csv", res.table(), delimiter=",", header="amplitude,V,delta_V", comments="", fmt="%.17g")
        summary = {
            "slope": res.slope, "relative_residual": res.relative_residual,
            "verdict": "nonlinear" if res.nonlinear else "linear", "sign_change": res.sign_change,
        }
    elif name == "fading":
        res = analysis.fading_probe(
            backend, h_const, float(pr.get("amplitude", 24.0)), float(pr.get("period", 1.0)),
            float(pr.get("lead", 0.5)), float(pr.get("budget", 20.0)), smooth=int(pr.get("smooth", 1)), key=key,
        )
        np.savetxt(out / "fading.csv", np.column_stack([res.times, res.voltages]), delimiter=",", header="t,V", comments="", fmt="%.17g")
        summary = res.summary()
    else:
        if "features" in pr:
            base = cfg.source.parent if cfg.source else Path.cwd()
            fm = FeatureMatrix.from_csv(base / pr["features"])
        else:
            *_, fm = waveform_features(cfg, cfg.subsection_specs())
            fm.to_csv(out / "features.csv")
        if name == "dimensionality":
            rep = analysis.dimensionality_report(fm, float(pr.get("sv_threshold", analysis.SV_THRESHOLD)))
            analysis.write_pairwise(rep, out / "pairwise")
            np.savetxt(out / "singular_values.csv", rep.singular_values, header="sigma", comments="", fmt="%.17g")
            summary = rep.summary()
        else:
            slopes = analysis.drift_probe(fm, int(pr.get("window", 100)))
            np.savetxt(out / "drift.csv", np.column_stack([np.arange(slopes.size), slopes]), delimiter=",",
                       header="column,slope", comments="", fmt="%.17g")
            summary = {"slopes": slopes.tolist(), "median_abs_slope": float(np.median(np.abs(slopes)))}
    summary = {"probe": name, **summary}
    analysis.write_json(out / f"{name}.json", summary)
    RunManifest.build(cfg.as_dict(), cfg.seed, [], task="probe", probe=name).to_json(out / "manifest.json")
    return summary


# ---------------------------------------------------------------- commands


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out = Path(args.out)
    if args.backend is not None:
        cfg.backend = {**cfg.backend, "kind": args.backend}
    return cfg


def _runtime_error(exc: BaseException) -> str:
    module = "cli"
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        if "skyrmion_rc" in frame.filename:
            module = Path(frame.filename).stem
            break
    return f"runtime error in module {module}: {type(exc).__name__}: {exc}"


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
        if cfg.task == "probe":
            return cmd_probe(args, cfg)
        out = _out_dir(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        task = {"waveform": run_waveform, "mnist": run_mnist, "sweep": run_sweep}[cfg.task]
        result = task(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(_runtime_error(exc), file=sys.stderr)
        return EXIT_RUNTIME
    acc = result.get("accuracy", result.get("segment_accuracy", result.get("pearson_r")))
    print(f"{cfg.task}: done ({acc}) -> {out}")
    return EXIT_OK


def cmd_probe(args, cfg: RunConfig | None = None) -> int:
    name = getattr(args, "name", None)
    try:
        if cfg is None:
            cfg = _load(args)
        name = name or cfg.probe.get("name")
        if name not in PROBES:
            raise ConfigError(f"unknown probe {name!r}; expected one of {PROBES}")
        out = _out_dir(cfg)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_probe(cfg, name, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(_runtime_error(exc), file=sys.stderr)
        return EXIT_RUNTIME
    print(f"probe {name}: done -> {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"{args.config}: {exc}")
        print("1 error")
        return EXIT_CONFIG
    except OSError as exc:
        print(f"{args.config}: {exc}")
        print("1 error")
        return EXIT_CONFIG
    print(f"{args.config}: task={cfg.task}")
    print("0 errors")
    print("decisions in effect:")
    for d in cfg.decisions:
        print(f"  - {d}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--seed", type=int, help="manifest seed (overrides run.seed)")
    common.add_argument("--workers", type=int, help="worker threads; 0 = all cores")
    common.add_argument("--backend", choices=["micromagnetic", "surrogate", "mock"], help="override backend.kind")
    parser = argparse.ArgumentParser(
        prog="skyrc",
        description=f"Skyrmion reservoir workbench. Dataset paths resolve against ${DATA_ENV} when set.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the configured task").set_defaults(func=cmd_run)
    p = sub.add_parser("probe", parents=[common], help="run a characterisation probe")
    p.add_argument("name", help=f"one of {', '.join(PROBES)}")
    p.set_defaults(func=cmd_probe)
    sub.add_parser("validate", parents=[common], help="check a config without running").set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
