"""
Stereokin command-line interface.

Subcommands:
    simulate      config + rates JSON -> trajectory CSV (optionally a noisy dataset)
    fit           thermal + heated loss curves -> JSON fit report (or --single)
    scan-dipole   beta(d) and barrier heights for one channel -> CSV + JSON summary
    occupancy     thermal level populations vs temperature -> CSV
    initial-rate  beta_initial vs ground-level fraction -> CSV
    cloud         cloud geometry of a config -> JSON
    channels      allowed collision channels of a molecule pair -> text / JSON
    bandmap       OD image or trace -> JSON populations + model overlay CSV

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 fit non-convergence.
Every written output gets a `<output>.manifest.json` beside it.

Usage:
    stereokin simulate --config data/example_config.json --rates data/example_rates.json --out runs/traj.csv
    stereokin fit --config data/example_config.json --thermal thermal.csv --heated heated.csv --out fit.json
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import __version__
from .bandmap import fit_populations, model_trace, pixels_to_momentum, read_od_image, transverse_average
from .channels import ChannelLabel, PairConfiguration, channel_table, classify_lowest_channel
from .core import Settings, a_ho_for, debye_to_si, kelvin_to_nk, nk_to_kelvin, scaled_temperature
from .data_loader import fractions_argument, load_experiment_config, load_rates, load_time_series, load_trace
from .errors import (
    BoundsError,
    ConfigError,
    DomainError,
    InsufficientDataError,
    IntegrationError,
    RankDeficiencyError,
    TruncationError,
)
from .fitting import FitResult, fit_single_beta, synthesize_dataset
from .gasmodel import VibrationalDistribution, boltzmann_occupancy, peak_layer_density
from .kinetics import initial_rate_curve
from .pipeline import StereodynamicsPipeline
from .scattering import dipole_scan
from .schemas import BandmapReport, CloudReport, FitReport, RunManifest, ScanSummary
from .storage import LocalRunStorage, write_gnuplot_script

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

INPUT_ERRORS = (DomainError, ConfigError, BoundsError, InsufficientDataError, TruncationError,
                ValidationError, OSError)
NUMERICAL_ERRORS = (IntegrationError, RankDeficiencyError)


def _manifest(args, inputs: List[str], config=None, seed: Optional[int] = None) -> RunManifest:
    arguments = {k: v for k, v in vars(args).items() if k != "func"}
    return RunManifest(
        subcommand=args.command,
        config=config.model_dump() if config is not None else None,
        inputs=[str(p) for p in inputs if p],
        seed=seed,
        arguments=arguments,
        version=__version__,
    )


def _output(storage: LocalRunStorage, args, suffix: str) -> Path:
    return Path(args.out) if args.out else storage.default_output(args.command, suffix)


def _unit_factor(name: str) -> float:
    if name.startswith("beta"):
        return 1e4
    if name.startswith("n_tot0"):
        return 1e-4
    return 1.0


def _unit_name(name: str) -> str:
    if name.startswith("beta"):
        return f"{name}_cm2_per_s"
    if name.startswith("n_tot0"):
        return f"{name}_cm2"
    return name


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def fit_report(result: FitResult, mode: str) -> FitReport:
    """FitResult in report units (cm^2/s, cm^-2)."""
    factors = np.array([_unit_factor(n) for n in result.names])
    names = [_unit_name(n) for n in result.names]
    cov = result.covariance * np.outer(factors, factors)
    return FitReport(
        mode=mode,
        parameters={n: float(v) for n, v in zip(names, result.params * factors)},
        standard_errors={n: _finite_or_none(e) for n, e in zip(names, result.standard_errors * factors)},
        covariance=[[_finite_or_none(c) for c in row] for row in cov],
        chi2=float(result.chi2),
        reduced_chi2=_finite_or_none(result.reduced_chi2),
        dof=result.dof,
        converged=result.converged,
        message=result.message,
        iterations=result.iterations,
        gradient_norm=float(result.gradient_norm),
        condition_number=_finite_or_none(result.condition_number),
        identifiable=result.identifiable,
        cost_history=[float(c) for c in result.cost_history],
    )


def _maybe_gnuplot(args, csv_path: Path, x: str, ys: List[str], logscale: str = ""):
    if getattr(args, "gnuplot", False):
        script = write_gnuplot_script(csv_path, x, ys, logscale)
        print(f"Gnuplot script: {script}")


# --- Subcommands ---

def cmd_simulate(args) -> int:
    storage = LocalRunStorage(args.runs_dir)
    file_model, config = load_experiment_config(args.config)
    rates = load_rates(args.rates) if args.rates else None
    pipeline = StereodynamicsPipeline(config, rates)
    prep = pipeline.step1_prepare_gas()
    trajectory = pipeline.step2_simulate_loss(prep, heated=args.heated)
    frame = trajectory.to_frame()

    inputs = [args.config, args.rates]
    out = storage.save_table(_output(storage, args, ".csv"), frame, _manifest(args, inputs, file_model, args.seed))
    print(f"Trajectory ({len(frame)} samples) written to {out}")
    ys = [c for c in frame.columns if c != "t_s"]
    _maybe_gnuplot(args, out, "t_s", ys)

    if args.dataset_out:
        dist = prep.heated if args.heated else prep.thermal
        label = "heated" if args.heated else "thermal"
        dataset = synthesize_dataset(pipeline.effective_rates(), dist, prep.n_tot0, trajectory.times,
                                     args.noise, args.seed, label)
        data_frame = dataset.to_frame()
        path = storage.save_table(args.dataset_out, data_frame, _manifest(args, inputs, file_model, args.seed))
        print(f"Dataset (noise {args.noise:.1%}) written to {path}")
        _maybe_gnuplot(args, path, "t_s", ["n_cm2"])
    return EXIT_OK


def cmd_fit(args) -> int:
    storage = LocalRunStorage(args.runs_dir)
    init = load_rates(args.init_rates) if args.init_rates else None

    if args.single:
        series = load_time_series(args.single, label="mixture")
        result = fit_single_beta(series)
        report = fit_report(result, "single")
        inputs, file_model = [args.single], None
    else:
        if not (args.config and args.thermal and args.heated):
            raise ConfigError("dual-curve fit needs --config, --thermal and --heated")
        file_model, config = load_experiment_config(args.config)
        thermal = load_time_series(args.thermal, label="thermal")
        heated = load_time_series(args.heated, label="heated")
        pipeline = StereodynamicsPipeline(config, init)
        prep = pipeline.step1_prepare_gas()
        if args.thermal_fractions:
            prep = dataclasses.replace(prep, thermal=VibrationalDistribution.normalized(fractions_argument(args.thermal_fractions)))
        if args.heated_fractions:
            prep = dataclasses.replace(prep, heated=VibrationalDistribution.normalized(fractions_argument(args.heated_fractions)))
        result = pipeline.step4_fit(prep, thermal, heated, init)
        report = fit_report(result, "dual")
        inputs = [args.config, args.thermal, args.heated, args.init_rates]

    out = storage.save_report(_output(storage, args, ".json"), report, _manifest(args, inputs, file_model))
    for name, value in report.parameters.items():
        err = report.standard_errors.get(name)
        err_text = f"{err:.3g}" if err is not None else "n/a"
        print(f"  {name:28s} {value:.6g} +- {err_text}")
    print(f"Fit report written to {out}")
    if not report.identifiable:
        print("Warning: normal matrix is ill-conditioned; some parameters are not identifiable.")
    if not report.converged:
        print(f"Fit did not converge: {report.message}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_scan_dipole(args) -> int:
    storage = LocalRunStorage(args.runs_dir)
    if args.points < 5:
        raise DomainError(f"--points must be at least 5, got {args.points}")
    if not 0 <= args.d_min < args.d_max:
        raise DomainError(f"need 0 <= d_min < d_max, got {args.d_min}, {args.d_max}")
    file_model, config = load_experiment_config(args.config)
    temperature = nk_to_kelvin(args.temperature_nk) if args.temperature_nk is not None else config.temperature
    grid = np.linspace(debye_to_si(args.d_min), debye_to_si(args.d_max), args.points)
    window = tuple(debye_to_si(w) for w in args.window) if args.window else None

    scan = dipole_scan(
        ChannelLabel(args.channel), grid, temperature, config.molecule, window,
        r_abs=config.simulation.r_abs, mode=args.mode, a_ho=a_ho_for(config), thermal=args.thermal,
    )
    frame = scan.to_frame()
    manifest = _manifest(args, [args.config], file_model)
    out = storage.save_table(_output(storage, args, ".csv"), frame, manifest)

    rate_column = frame.columns[1]
    summary = ScanSummary(
        channel=args.channel,
        mode=args.mode,
        temperature_nk=kelvin_to_nk(temperature),
        points=args.points,
        slope=scan.slope,
        window_debye=list(args.window) if args.window else [args.d_min, args.d_max],
        rate_units=rate_column,
        thermal_average=args.thermal,
    )
    summary_path = storage.save_report(out.with_suffix(".json"), summary, manifest)
    print(f"Channel {ChannelLabel(args.channel).ket}: log-log slope {scan.slope:.3f}")
    print(f"Scan written to {out}, summary to {summary_path}")
    _maybe_gnuplot(args, out, "d_debye", [rate_column], logscale="y")
    return EXIT_OK


def _save_rows(storage: LocalRunStorage, args, frame: pd.DataFrame, manifest: RunManifest) -> Path:
    """CSV table, or a JSON list of row objects with --format json."""
    if args.format == "json":
        rows = frame.to_dict(orient="records")
        return storage.save_text(_output(storage, args, ".json"), json.dumps(rows, indent=2), manifest)
    return storage.save_table(_output(storage, args, ".csv"), frame, manifest)


def cmd_occupancy(args) -> int:
    storage = LocalRunStorage(args.runs_dir)
    rows = []
    for t_nk in args.temperatures_nk:
        dist = boltzmann_occupancy(nk_to_kelvin(t_nk), args.nu_z_hz, args.v_cut)
        row = {"temperature_nk": t_nk, "scaled_temperature": scaled_temperature(nk_to_kelvin(t_nk), args.nu_z_hz)}
        row.update({f"f{v}": float(f) for v, f in enumerate(dist.fractions)})
        row["purity"] = dist.purity()
        rows.append(row)
    frame = pd.DataFrame(rows)
    out = _save_rows(storage, args, frame, _manifest(args, []))
    if args.format == "csv":
        _maybe_gnuplot(args, out, "temperature_nk", [f"f{v}" for v in range(args.v_cut + 1)])
    print(frame.to_string(index=False))
    print(f"Occupancy table written to {out}")
    return EXIT_OK


def cmd_initial_rate(args) -> int:
    storage = LocalRunStorage(args.runs_dir)
    rates = load_rates(args.rates)
    temps = np.linspace(nk_to_kelvin(args.t_min_nk), nk_to_kelvin(args.t_max_nk), args.points)
    frame = initial_rate_curve(rates.beta2, rates.beta3, args.nu_z_hz, temps, args.v_cut)
    frame["beta_initial_cm2_per_s"] = frame["beta_initial_m2_per_s"] * 1e4
    out = _save_rows(storage, args, frame, _manifest(args, [args.rates]))
    print(f"Initial-rate curve ({len(frame)} points) written to {out}")
    if args.format == "csv":
        _maybe_gnuplot(args, out, "ground_fraction", ["beta_initial_cm2_per_s"])
    return EXIT_OK


def cmd_cloud(args) -> int:
    storage = LocalRunStorage(args.runs_dir)
    file_model, config = load_experiment_config(args.config)
    pipeline = StereodynamicsPipeline(config)
    prep = pipeline.step1_prepare_gas()
    report = CloudReport(
        total_molecules=config.total_molecules,
        sigma_r_um=prep.cloud.sigma_r * 1e6,
        alpha=prep.cloud.alpha,
        average_density_cm2=prep.n_tot0 * 1e-4,
        peak_layer_number=prep.stack.peak,
        peak_density_cm2=peak_layer_density(prep.stack.peak, prep.cloud.sigma_r) * 1e-4,
        a_ho_nm=a_ho_for(config) * 1e9,
        scaled_temperature=scaled_temperature(config.temperature, config.trap.nu_z),
        ground_fraction=prep.thermal.ground_fraction,
    )
    out = storage.save_report(_output(storage, args, ".json"), report, _manifest(args, [args.config], file_model))
    for key, value in report.model_dump().items():
        print(f"  {key:22s} {value:.6g}")
    print(f"Cloud report written to {out}")
    return EXIT_OK


def cmd_channels(args) -> int:
    pair = PairConfiguration(same_internal_state=not args.different_state, v1=args.v1, v2=args.v2)
    rows = channel_table(pair, args.l_max, args.m_max)
    lowest = classify_lowest_channel(pair)
    if args.format == "json":
        text = json.dumps({"lowest": int(lowest), "channels": rows}, indent=2)
    else:
        lines = [f"{'eta':>4} {'L':>3} {'gamma':>6} {'M':>4}  label"]
        lines += [f"{r['eta']:>4} {r['L']:>3} {r['gamma']:>6} {r['M']:>4}  {r['label']}" for r in rows]
        lines.append(f"lowest channel: {lowest.ket}")
        text = "\n".join(lines)
    print(text)
    if args.out:
        LocalRunStorage(args.runs_dir).save_text(args.out, text + "\n", _manifest(args, []))
    return EXIT_OK


def cmd_bandmap(args) -> int:
    storage = LocalRunStorage(args.runs_dir)
    if bool(args.image) == bool(args.trace):
        raise ConfigError("give exactly one of --image or --trace")
    if args.image:
        image = read_od_image(args.image, args.pixel_size, args.calibration)
        trace = transverse_average(image, args.rms_width)
        source = args.image
    else:
        trace = load_trace(args.trace)
        source = args.trace

    resolution = args.resolution
    if resolution is not None and args.resolution_px is not None:
        raise ConfigError("give at most one of --resolution and --resolution-px")
    if args.resolution_px is not None:
        resolution = pixels_to_momentum(args.resolution_px, args.calibration)
    pops = fit_populations(trace, resolution)

    report = BandmapReport(
        fractions=[float(f) for f in pops.fractions],
        uncertainties=[_finite_or_none(u) for u in pops.uncertainties],
        resolution_hbark=pops.resolution,
        amplitude=pops.amplitude,
        offset=pops.offset,
        center_hbark=pops.center,
        residual_norm=pops.residual_norm,
        converged=pops.converged,
    )
    manifest = _manifest(args, [source])
    out = storage.save_report(_output(storage, args, ".json"), report, manifest)
    model = model_trace(pops.fractions, pops.resolution, pops.amplitude, pops.offset, trace.momentum, pops.center)
    overlay = pd.DataFrame({"p_hbark": trace.momentum, "od": trace.od, "model_od": model.od})
    overlay_path = storage.save_table(out.with_name(out.stem + "_model.csv"), overlay, manifest)
    print("Zone populations: " + ", ".join(f"n{v}/n_tot = {f:.3f}" for v, f in enumerate(pops.fractions)))
    print(f"Report written to {out}, model overlay to {overlay_path}")
    _maybe_gnuplot(args, overlay_path, "p_hbark", ["od", "model_od"])
    if not pops.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereokin", description="Stereodynamics of ultracold molecules in a lattice")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--runs-dir", default="runs", help="Base directory for outputs without --out")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, gnuplot: bool = True):
        p.add_argument("--out", help="Output path")
        if gnuplot:
            p.add_argument("--gnuplot", action="store_true", help="Write a gnuplot script beside the CSV")

    p = sub.add_parser("simulate", help="Integrate the loss equations at the average density")
    p.add_argument("--config", required=True)
    p.add_argument("--rates", help="Rates JSON; predicted from the scattering model when omitted")
    p.add_argument("--heated", action="store_true", help="Start from the parametrically heated populations")
    p.add_argument("--dataset-out", help="Also write a noisy fit-ready dataset here")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="Fit loss rates to measured curves")
    p.add_argument("--config")
    p.add_argument("--thermal")
    p.add_argument("--heated")
    p.add_argument("--single", help="Single-curve beta_1 fit of this dataset")
    p.add_argument("--init-rates", help="Rates JSON used as the starting point")
    p.add_argument("--thermal-fractions", help="Measured populations of the thermal curve, e.g. 0.75,0.19,0.06")
    p.add_argument("--heated-fractions", help="Measured populations of the heated curve")
    add_common(p, gnuplot=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("scan-dipole", help="Rate constant and barrier vs induced dipole")
    p.add_argument("--config", required=True)
    p.add_argument("--channel", type=int, choices=[1, 2, 3], default=2)
    p.add_argument("--d-min", type=float, default=0.0, help="Debye")
    p.add_argument("--d-max", type=float, default=0.2, help="Debye")
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--mode", choices=["2d", "3d"], default="3d")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"), help="Slope window in Debye")
    p.add_argument("--temperature-nk", type=float)
    p.add_argument("--thermal", action="store_true", help="Maxwell-Boltzmann averaged rates")
    add_common(p)
    p.set_defaults(func=cmd_scan_dipole)

    p = sub.add_parser("occupancy", help="Thermal lattice-level populations")
    p.add_argument("--temperatures-nk", type=float, nargs="+", default=[800.0])
    p.add_argument("--nu-z-hz", type=float, default=23e3)
    p.add_argument("--v-cut", type=int, default=2)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    add_common(p)
    p.set_defaults(func=cmd_occupancy)

    p = sub.add_parser("initial-rate", help="beta_initial vs ground-level fraction in equilibrium")
    p.add_argument("--rates", required=True)
    p.add_argument("--nu-z-hz", type=float, default=23e3)
    p.add_argument("--t-min-nk", type=float, default=100.0)
    p.add_argument("--t-max-nk", type=float, default=2000.0)
    p.add_argument("--points", type=int, default=40)
    p.add_argument("--v-cut", type=int, default=2)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    add_common(p)
    p.set_defaults(func=cmd_initial_rate)

    p = sub.add_parser("cloud", help="Layer stack and densities of a config")
    p.add_argument("--config", required=True)
    add_common(p, gnuplot=False)
    p.set_defaults(func=cmd_cloud)

    p = sub.add_parser("channels", help="Allowed collision channels of a pair")
    p.add_argument("--different-state", action="store_true", help="Molecules in different internal states")
    p.add_argument("--v1", type=int, default=0)
    p.add_argument("--v2", type=int, default=0)
    p.add_argument("--l-max", type=int, default=3)
    p.add_argument("--m-max", type=int, default=2)
    p.add_argument("--format", choices=["text", "json"], default="text")
    add_common(p, gnuplot=False)
    p.set_defaults(func=cmd_channels)

    p = sub.add_parser("bandmap", help="Zone populations from a band-mapping image or trace")
    p.add_argument("--image", help="CSV matrix, ODIM binary or grayscale image")
    p.add_argument("--trace", help="Trace CSV with p_hbark, od")
    p.add_argument("--rms-width", type=float, default=5.0, help="Transverse window, pixels")
    p.add_argument("--pixel-size", type=float, default=1.0, help="m / pixel")
    p.add_argument("--calibration", type=float, default=0.05, help="hbar k / pixel")
    p.add_argument("--resolution", type=float, help="Fixed Gaussian resolution, hbar k")
    p.add_argument("--resolution-px", type=float, help="Fixed Gaussian resolution, pixels")
    add_common(p)
    p.set_defaults(func=cmd_bandmap)
    return parser


def configure_logging(verbose: bool = False):
    level = "DEBUG" if verbose else Settings.from_env().log_level
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NUMERICAL_ERRORS as exc:
        print(f"Numerical failure: {exc}", file=sys.stderr)
        diagnostics = getattr(exc, "diagnostics", None)
        if diagnostics:
            print(f"  diagnostics: {diagnostics}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
