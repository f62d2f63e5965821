"""Measure the micromagnetic qualitative behaviours and write a JSON summary.

    python scripts/qualitative_claims.py [--out runs/qualitative.json] [--only memory,fading]

Behaviours: memory, nonlinearity, fading, dimensionality and drift (skyrmion
vs ferro-domain regime over three seeds) and the density/accuracy sweep.
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from skyrmion_rc import analysis
from skyrmion_rc.backends import DEVICE_PRESETS, MicromagneticConfig
from skyrmion_rc.encoding import WaveformSpec, balanced_seed, generate_waveform
from skyrmion_rc.harness import SubsectionSpec, run_reservoir, sampling_grid
from skyrmion_rc.readout import evaluate_waveform

SKY = MicromagneticConfig()
FERRO = MicromagneticConfig(params=DEVICE_PRESETS["D"], reset_texture="band")
H_PROBE = 1.12
H_GRID = [0.0, 1.12, 2.24, 3.36]


def memory():
    r = analysis.memory_probe(SKY, H_PROBE, 24.0, noise_repeats=2)
    return r.summary()


def nonlinearity():
    r = analysis.nonlinearity_probe(SKY, H_PROBE, [8.0, 16.0, 24.0, 32.0, 40.0])
    return {"relative_residual": r.relative_residual, "sign_change": r.sign_change, "responses": r.responses.tolist()}


def fading():
    return analysis.fading_probe(SKY, H_PROBE, 24.0, budget=20.0).summary()


def waveform_run(backend, seed, segments, amplitude=24.0, h_grid=H_GRID, observer=None):
    protocol, labels, _ = generate_waveform(WaveformSpec(segments, amplitude=amplitude, seed=seed))
    specs = [SubsectionSpec(h, backend.replace(seed=seed)) for h in h_grid]
    out = run_reservoir(specs, protocol, 100.0, seed=seed, observer=observer)
    _, idx = sampling_grid(protocol, 100.0)
    return out, labels[idx]


def dimensionality(seeds=(0, 1, 2), segments=6):
    rows = []
    for seed in seeds:
        ranks = {}
        for name, backend in (("skyrmion", SKY), ("ferro", FERRO)):
            fm, _ = waveform_run(backend, seed, segments)
            rep = analysis.dimensionality_report(fm)
            slopes = np.abs(analysis.drift_probe(fm))
            ranks[name] = {"rank": rep.effective_rank, "sv": rep.singular_values.tolist(),
                           "median_abs_drift": float(np.median(slopes))}
        rows.append({"seed": seed, **ranks})
    return rows


def sweep(amplitudes=(16.0, 24.0), segments=10, h_grid=tuple(H_GRID)):
    # both halves need both classes or the readout learns a constant
    seed = balanced_seed(segments)
    points = []
    for dev, params in DEVICE_PRESETS.items():
        backend = MicromagneticConfig(params=params)
        area = backend.nx * backend.ny * backend.cell_size**2
        for amp in amplitudes:
            (fm, obs), labels = waveform_run(backend, seed, segments, amp, list(h_grid), analysis.skyrmion_counter())
            _, rep = evaluate_waveform(fm.design(), labels, 100)
            density = analysis.mean_skyrmion_density([c for col in obs for c in col], area)
            points.append({"device": dev, "amplitude": amp, "density": density, "accuracy": rep.sample_accuracy,
                           "segment_accuracy": rep.segment_accuracy})
    pts = [(p["density"], p["accuracy"]) for p in points]
    try:
        r = analysis.count_accuracy_correlation(pts)
    except analysis.DegenerateInput:
        r = None
    return {"points": points, "pearson_r": r, "waveform_seed": seed}


TASKS = {"memory": memory, "nonlinearity": nonlinearity, "fading": fading, "dimensionality": dimensionality, "sweep": sweep}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/qualitative.json")
    ap.add_argument("--only", default=",".join(TASKS))
    args = ap.parse_args()
    results = {}
    for name in args.only.split(","):
        t0 = time.perf_counter()
        results[name] = TASKS[name]()
        results[name + "_seconds"] = round(time.perf_counter() - t0, 1)
        print(name, json.dumps(results[name], default=float)[:600], results[name + "_seconds"], "s", flush=True)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    analysis.write_json(args.out, results)


if __name__ == "__main__":
    main()
