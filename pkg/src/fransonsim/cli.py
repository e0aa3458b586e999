"""Command-line surface.

Subcommands: dressed, simulate, correlate, franson-fit, michelson,
lock-sim, sweep. Global flags: --config PATH, --seed N, --out DIR,
--format csv|json. Exit codes: 0 success, 2 configuration error,
3 fit non-convergence, 4 I/O or file-format error.

All outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, lock, pipeline, tagio
from .config import load_experiment_config, load_sweep_table
from .emission import simulate_pair_stream
from .errors import (ConfigError, FitConvergenceError, LockInstabilityError,
                     TagFormatError)
from .physics import dressed_eigenvalues


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _write_table(path: Path, header: list[str], rows, fmt: str) -> Path:
    """Write a table as CSV or as a JSON list of row objects."""
    if fmt == "json":
        path = path.with_suffix(".json")
        payload = [dict(zip(header, row)) for row in rows]
        _write_text(path, json.dumps(payload, indent=2, default=_jsonable) + "\n")
    else:
        path = path.with_suffix(".csv")
        lines = [",".join(header)]
        lines += [",".join(_cell(v) for v in row) for row in rows]
        _write_text(path, "\n".join(lines) + "\n")
    return path


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON-serializable: {type(value)}")


def _require_config(args) -> "ExperimentConfig":
    if args.config is None:
        raise ConfigError("--config: required for this subcommand")
    return load_experiment_config(args.config)


def _seed(args, config=None) -> int:
    if args.seed is not None:
        return args.seed
    return 0 if config is None else config.seed


# ---------------------------------------------------------------------------
# subcommands


def _cmd_dressed(args) -> int:
    config = _require_config(args)
    rabis_mev = np.linspace(0.0, args.rabi_max_mev, args.steps)
    rows = []
    for rabi_mev in rabis_mev:
        rabi = max(rabi_mev * 1e-3, 1e-12)  # keep the zero-drive row well defined
        e0, e_minus, e_plus = dressed_eigenvalues(config.qd.binding_energy, rabi)
        rows.append([rabi_mev, e0 * 1e3, e_minus * 1e3, e_plus * 1e3,
                     (e_minus - e_plus) * 1e3])
    path = _write_table(Path(args.out) / "dressed",
                        ["rabi_energy_meV", "e0", "e_minus", "e_plus", "split_meV"],
                        rows, args.format)
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args) -> int:
    config = _require_config(args)
    seed = _seed(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.raw_pairs:
        emitter = dataclasses.replace(config.emitter, seed=seed)
        pairs = simulate_pair_stream(emitter, config.drive)
        rows = [[p["t_xx"], p["t_x"], p["pair_phase"], bool(p["from_cascade"])]
                for p in pairs]
        path = _write_table(out / "pairs",
                            ["t_xx_ps", "t_x_ps", "pair_phase_rad", "from_cascade"],
                            rows, "csv")
        print(f"wrote {path} ({pairs.size} pair events)")
        return 0

    data, tag_arrays = pipeline.run_franson_scan(config, seed=seed, collect_tags=True)
    files = []
    for k, tags in enumerate(tag_arrays):
        name = f"phase_{k:02d}.ftag"
        tagio.write_time_tags(out / name, tags)
        files.append({"path": name, "total_phase": float(data.phase_totals[k]),
                      "records": int(tags.size)})
    manifest = {
        "format": "FTAG1",
        "duration_ps": config.emitter.duration,
        "seed": seed,
        "basis": config.basis,
        "files": files,
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(files)} tag files and manifest.json under {out}")
    return 0


def _cmd_correlate(args) -> int:
    out = Path(args.out)
    tau_range = (args.tau_min, args.tau_max)
    for file in args.files:
        tags = tagio.read_time_tags(file)
        hist = analysis.cross_histogram(
            tags, args.channel_a, args.channel_b, args.bin_width, tau_range,
            total_time=args.total_time_s)
        norm = analysis.normalize_histogram(hist)
        rows = list(zip(hist.bin_centers, hist.counts.astype(int), norm.counts))
        path = _write_table(out / (Path(file).stem + "_corr"),
                            ["tau_ps", "counts", "normalized"], rows, args.format)
        print(f"wrote {path}")
    return 0


def _cmd_franson_fit(args) -> int:
    config = _require_config(args)
    out = Path(args.out)

    manifest_path = Path(args.manifest)
    manifest = json.loads(manifest_path.read_text())
    from .constants import S_PER_PS
    duration_s = float(manifest["duration_ps"]) * S_PER_PS
    tag_arrays, phases = [], []
    for entry in manifest["files"]:
        tag_arrays.append(tagio.read_time_tags(manifest_path.parent / entry["path"]))
        phases.append(float(entry["total_phase"]))

    data = pipeline.scan_from_tags(tag_arrays, phases, config, duration_s,
                                   seed=_seed(args, config))
    report = pipeline.analyze_franson(data, config)

    fit_json = {
        "visibility": report.corrected.visibility,
        "sigma_v": report.corrected.sigma_v,
        "phase_origin_rad": report.corrected.phase_origin,
        "mean_level": report.corrected.mean_level,
        "chi2_reduced": report.corrected.chi2_reduced,
        "visibility_uncorrected": report.uncorrected.visibility,
        "sigma_v_uncorrected": report.uncorrected.sigma_v,
        "violates_chsh": report.violates_chsh,
        "n_sigma_chsh": report.n_sigma,
        "window_ps": list(report.window),
        "zero_delay_normalized": report.zero_delay,
        "parameter_covariance": report.corrected.covariance.tolist(),
        "blinking": None if report.blinking is None else {
            "amplitude": report.blinking.amplitude,
            "timescale_ps": report.blinking.timescale,
            "baseline": report.blinking.baseline,
            "covariance": report.blinking.covariance.tolist(),
        },
    }
    _write_text(out / "franson_fit.json",
                json.dumps(fit_json, indent=2, default=_jsonable) + "\n")

    rows = [[w, vc, sc, vu, su] for (w, vc, sc), (_, vu, su)
            in zip(report.curve_corrected, report.curve_uncorrected)]
    _write_table(out / "visibility_curve",
                 ["window_ps", "v_corrected", "sigma_corrected",
                  "v_uncorrected", "sigma_uncorrected"], rows, args.format)
    phase_rows = [[p, s, e] for p, (s, e) in zip(data.phase_totals, report.window_sums)]
    _write_table(out / "phase_counts",
                 ["total_phase_rad", "corrected_sum", "sigma"], phase_rows, args.format)
    print(f"V = {report.corrected.visibility:.4f} +- {report.corrected.sigma_v:.4f} "
          f"(CHSH n_sigma = {report.n_sigma:.2f}); outputs under {out}")
    return 0


def _cmd_michelson(args) -> int:
    config = _require_config(args)
    delays = np.arange(args.delay_min, args.delay_max + 0.5 * args.delay_step,
                       args.delay_step)
    curve, t2_fit, t2_sigma = pipeline.michelson_coherence_time(
        args.t2, config.qd.fss, config.basis, delays, args.piezo_steps,
        args.noise_sigma, _seed(args, config))
    out = Path(args.out)
    path = _write_table(out / "michelson",
                        ["delay_ps", "visibility", "sigma_v"],
                        [list(r) for r in curve], args.format)
    _write_text(out / "michelson_fit.json", json.dumps({
        "t2_fit_ps": t2_fit, "t2_sigma_ps": t2_sigma,
        "basis": config.basis, "input_t2_ps": args.t2}, indent=2) + "\n")
    print(f"T2 = {t2_fit:.1f} +- {t2_sigma:.1f} ps; wrote {path}")
    return 0


def _cmd_lock_sim(args) -> int:
    gains = lock.PidGains(kp=args.kp, ki=args.ki, kd=args.kd, dt=args.dt,
                          integral_clamp=args.integral_clamp)
    drift = lock.DriftModel(random_walk_sigma=args.rw_sigma,
                            slow_sine_amplitude=args.sine_amplitude,
                            slow_sine_period=args.sine_period)
    sensor = lock.FringeSensorParams(fringe_visibility=args.fringe_visibility,
                                     noise_sigma=args.noise_sigma)
    trace = lock.run_lock(drift, sensor, gains, args.duration, _seed(args))
    rows = zip(trace.t, trace.phase_true, trace.reading, trace.control,
               trace.residual)
    path = _write_table(Path(args.out) / "lock_trace",
                        ["t_s", "phase_true_rad", "reading", "control",
                         "residual_rad"], rows, args.format)
    skip = min(1000, trace.t.size // 10)
    print(f"RMS residual {trace.residual_rms(skip=skip):.4g} rad; wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    config = _require_config(args)
    table = load_sweep_table(args.table)
    results = pipeline.run_sweep(config, table, _seed(args, config))
    out = Path(args.out)

    header = ["power_uw", "visibility", "sigma_v", "n_sigma_chsh",
              "t2_fit_ps", "t2_sigma_ps", "zero_delay_normalized"]
    rows = []
    for r in results:
        if "error" in r:
            rows.append([r["power_uw"]] + [math.nan] * (len(header) - 1))
            print(f"power {r['power_uw']} uW failed: {r['error']}", file=sys.stderr)
        else:
            rows.append([r[h] for h in header])
    path = _write_table(out / "sweep", header, rows, "csv")
    _write_text(out / "sweep.json", json.dumps(results, indent=2, default=_jsonable) + "\n")
    print(f"wrote {path} and sweep.json ({len(results)} rows)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fransonsim",
        description="Simulate and analyze Franson interferometry on a "
                    "driven quantum-dot cascade")
    parser.add_argument("--config", help="TOML experiment configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed override (default: seed from the config)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dressed", help="dressed-state eigenvalues vs drive")
    p.add_argument("--rabi-max-mev", type=float, default=5.0)
    p.add_argument("--steps", type=int, default=26)
    p.set_defaults(func=_cmd_dressed)

    p = sub.add_parser("simulate", help="generate time-tag files for a phase scan")
    p.add_argument("--raw-pairs", action="store_true",
                   help="write the pre-detection pair stream as a debug CSV instead")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("correlate", help="histogram tag files")
    p.add_argument("files", nargs="+")
    p.add_argument("--channel-a", type=int, default=0)
    p.add_argument("--channel-b", type=int, default=1)
    p.add_argument("--bin-width", type=float, default=8.0)
    p.add_argument("--tau-min", type=float, default=-16000.0)
    p.add_argument("--tau-max", type=float, default=16000.0)
    p.add_argument("--total-time-s", type=float, default=None)
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("franson-fit", help="full reduction of a simulated phase scan")
    p.add_argument("--manifest", required=True,
                   help="manifest.json written by the simulate subcommand")
    p.set_defaults(func=_cmd_franson_fit)

    p = sub.add_parser("michelson", help="coherence-time scan and fit")
    p.add_argument("--t2", type=float, default=508.0)
    p.add_argument("--delay-min", type=float, default=-100.0)
    p.add_argument("--delay-max", type=float, default=1300.0)
    p.add_argument("--delay-step", type=float, default=20.0)
    p.add_argument("--piezo-steps", type=int, default=16)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.set_defaults(func=_cmd_michelson)

    p = sub.add_parser("lock-sim", help="phase stabilization loop")
    p.add_argument("--kp", type=float, default=0.5)
    p.add_argument("--ki", type=float, default=5.0)
    p.add_argument("--kd", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--integral-clamp", type=float, default=2.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--rw-sigma", type=float, default=1e-3)
    p.add_argument("--sine-amplitude", type=float, default=0.5)
    p.add_argument("--sine-period", type=float, default=600.0)
    p.add_argument("--noise-sigma", type=float, default=1e-3)
    p.add_argument("--fringe-visibility", type=float, default=0.97)
    p.set_defaults(func=_cmd_lock_sim)

    p = sub.add_parser("sweep", help="power sweep: simulate + reduce each table row")
    p.add_argument("--table", required=True, help="CSV sweep table")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (FitConvergenceError, LockInstabilityError) as err:
        print(f"fit error: {err}", file=sys.stderr)
        return 3
    except TagFormatError as err:
        print(f"tag file error: {err}", file=sys.stderr)
        return 4
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 4


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
