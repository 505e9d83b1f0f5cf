#!/usr/bin/env python3
"""
Direct Encoding experiments

Builds linear lifted models A = Q R^-1 of a discrete-time map from inner products of
observables and their compositions, then predicts, analyses the spectrum, sweeps the
dictionary size, checks the truncated kernel and the membership residuals.
Every run writes CSVs plus a manifest.json to the configured output directory.

    python main.py encode   --config data/configs/identity.json
    python main.py sweep    --config data/configs/sweep.json --set analysis.sweep_m=[17,33]
    python main.py predict  --config data/configs/cable.json --out data/output/cable
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from analysis import (
    KERNEL_GRID,
    compare_trajectories,
    fit_decoder,
    kernel_check,
    kernel_grid,
    lifted_to_state,
    membership_residuals,
    phase_decode,
    predict,
    rmse_sweep,
    spectrum,
)
from dynamics import CableSystem, branch_switches, count_bounces
from encoding import TruncatedKernel, conditioning_report, direct_encode, kernel_values
from errors import ArgumentError, NumericalError
from experiment import (
    ExperimentConfig,
    build_dictionary,
    build_quadrature,
    build_system,
    initial_state,
    initial_states,
    load_config,
    sample_set,
    truth_trajectory,
)
from observables import (
    EXP_TRIG,
    REAL_FOURIER,
    build_exp_trig,
    build_rbf,
    kmeanspp_centers,
    switching_band_density,
    write_centers_csv,
)
from output import (
    write_comparison_csv,
    write_conditioning_csv,
    write_kernel_profile_csv,
    write_kernel_summary_csv,
    write_manifest,
    write_matrix_csv,
    write_residuals_csv,
    write_spectrum_csv,
    write_sweep_csv,
    write_trajectory_csv,
)
from quadrature import build_rule, default_panel_count

CABLE_LABELS = ["x_m", "y_m", "xdot_m", "ydot_m"]


def state_labels(system) -> list[str]:
    if isinstance(system, CableSystem):
        return CABLE_LABELS
    return ["x"] if system.domain.dimension == 1 else [f"x{i}" for i in range(system.domain.dimension)]


def _encode(config: ExperimentConfig, stage: str):
    print(f"\n{stage} ENCODING")
    system = build_system(config.system)
    dictionary = build_dictionary(config, system)
    rule = build_quadrature(config, system, dictionary)
    print(f"  System: {system.kind}")
    print(f"  Dictionary: {dictionary.describe()}")
    print(f"  Quadrature: {rule.describe()}")
    model = direct_encode(dictionary, system, rule, config.dictionary.lam, verbose=True)
    return system, dictionary, rule, model


def run_encode(config: ExperimentConfig, out: Path) -> list[Path]:
    _system, _dictionary, _rule, model = _encode(config, "[1/2]")
    report = conditioning_report(model)
    for key, value in report.items():
        print(f"  {key}: {value}")

    print("\n[2/2] WRITING MATRICES")
    meta = model.metadata()
    return [
        write_matrix_csv(out / "R.csv", model.R, meta),
        write_matrix_csv(out / "Q.csv", model.Q, meta),
        write_matrix_csv(out / "A.csv", model.A, meta),
        write_conditioning_csv(out / "conditioning.csv", report),
    ]


def run_predict(config: ExperimentConfig, out: Path) -> list[Path]:
    system, dictionary, rule, model = _encode(config, "[1/3]")

    print("\n[2/3] PREDICTING")
    x0 = initial_state(config, system)
    steps = config.scenario.steps
    lifted = predict(model, x0, steps)
    if config.analysis.decoder == "phase" and dictionary.kind in (REAL_FOURIER, EXP_TRIG):
        predicted = phase_decode(dictionary, lifted)
        print("  Decoder: phase of the first harmonic")
    else:
        decoder = fit_decoder(dictionary, rule, config.dictionary.lam)
        predicted = lifted_to_state(model, decoder, lifted)
        print(f"  Decoder: linear least squares (fit residual {decoder.residual:.3e})")
    truth = truth_trajectory(config, system, x0)
    comparison = compare_trajectories(truth, predicted)
    print(f"  x0 = {x0.tolist()}, {steps} steps")
    print(f"  RMSE: {comparison.rmse:.6g}   max error: {comparison.max_error:.6g}")
    if isinstance(system, CableSystem):
        print(f"  Bounces in truth: {count_bounces(truth)}   position RMSE: {comparison.rmse_of([0, 1]):.6g}")
    elif truth.regions is not None:
        print(f"  Branch switches in truth: {branch_switches(truth)}")

    print("\n[3/3] WRITING TRAJECTORIES")
    truth_meta = {"bounces": count_bounces(truth)} if isinstance(system, CableSystem) else None
    labels = state_labels(system)
    return [
        write_trajectory_csv(out / "truth.csv", truth, labels, truth_meta),
        write_trajectory_csv(out / "predicted.csv", predicted, labels),
        write_comparison_csv(out / "comparison.csv", comparison, labels),
    ]


def run_spectrum(config: ExperimentConfig, out: Path) -> list[Path]:
    _system, _dictionary, _rule, model = _encode(config, "[1/2]")

    print("\n[2/2] SPECTRUM")
    result = spectrum(model, config.analysis.eps)
    print(f"  max |lambda| = {result.max_abs:.6f} -> {result.classification}")
    print(f"  Eigenvalues within eps of the unit circle: {result.near_unit_circle()}")
    return [write_spectrum_csv(out / "spectrum.csv", result, model.metadata())]


def run_sweep(config: ExperimentConfig, out: Path) -> list[Path]:
    print("\n[1/2] SWEEP")
    system = build_system(config.system)
    starts = initial_states(config, system)
    m_values = config.analysis.sweep_m
    print(f"  {config.analysis.sweep_family} sizes {m_values}, {config.scenario.steps} steps")
    if len(starts) == 1:
        print(f"  x0 = {starts[0].tolist()}")
    else:
        print(f"  {len(starts)} initial states in [{starts.min():.4g}, {starts.max():.4g}], errors pooled")
    results = rmse_sweep(
        system,
        config.analysis.sweep_family,
        m_values,
        starts,
        config.scenario.steps,
        decoder=config.analysis.decoder,
    )

    print("\n[2/2] WRITING SWEEP")
    meta = {
        "system": system.kind,
        "family": config.analysis.sweep_family,
        "decoder": config.analysis.decoder,
        "initial_states": len(starts),
    }
    return [write_sweep_csv(out / "sweep.csv", results, meta)]


def run_kernel_check(config: ExperimentConfig, out: Path) -> list[Path]:
    print("\n[1/2] KERNEL CHECK")
    system = build_system(config.system)
    profiles = kernel_check(system, config.analysis.kernel_n_max)
    for p in profiles:
        print(f"  m={p.m:5d}  {p.name:12s}  RMS error {p.rms_error:.3e}")

    print("\n[2/2] WRITING PROFILES")
    files = [write_kernel_summary_csv(out / "kernel_check.csv", profiles)]
    for i, p in enumerate(profiles):
        files.append(write_kernel_profile_csv(out / f"kernel_{i:02d}_m{p.m}.csv", p))

    kernel = TruncatedKernel(build_exp_trig(max(config.analysis.kernel_n_max), system.domain), system)
    x = kernel_grid(system, KERNEL_GRID // 2)
    K = kernel_values(kernel, x, x)
    meta = {"system": system.kind, "m": kernel.dictionary.size, "x_min": float(x[0]), "x_max": float(x[-1])}
    files.append(write_matrix_csv(out / f"kappa_m{kernel.dictionary.size}.csv", K, meta))
    return files


def run_residuals(config: ExperimentConfig, out: Path) -> list[Path]:
    print("\n[1/2] MEMBERSHIP RESIDUALS")
    system = build_system(config.system)
    N_values = config.analysis.residual_N
    n_max = config.dictionary.n_max if config.dictionary.n_max is not None else (max(N_values) - 1) // 2
    dictionary = build_exp_trig(n_max, system.domain)
    rule = build_rule(
        system.domain,
        points_per_panel=config.quadrature.points_per_panel,
        panel_count=config.quadrature.panel_count or default_panel_count(n_max),
        breakpoints=getattr(system, "breakpoints", ()),
    )
    results = []
    for idx, i in enumerate(config.analysis.residual_i, start=1):
        norm_sq, rows = membership_residuals(dictionary, system, rule, i, N_values)
        last = rows[-1]
        print(f"  [{idx}/{len(config.analysis.residual_i)}] i={i}: |phi_i o F|^2 = {norm_sq:.6f}, "
              f"J_{last.N} = {last.J_N:.6f}, I_{last.N} error = {last.I_N_error:.3e}")
        results.append((i, norm_sq, rows))

    print("\n[2/2] WRITING RESIDUALS")
    return [write_residuals_csv(out / "residuals.csv", results)]


def run_centers(config: ExperimentConfig, out: Path) -> list[Path]:
    print("\n[1/2] CENTER PLACEMENT")
    system = build_system(config.system)
    if not isinstance(system, CableSystem):
        raise ArgumentError("system.kind must be 'cable' for center placement")
    if config.dictionary.centers is None:
        raise ArgumentError("dictionary.centers (count) is required for center placement")
    runs = sample_set(config, system)
    samples = np.vstack([t.values for t in runs])
    bounces = [count_bounces(t) for t in runs]
    print(f"  {len(runs)} sample trajectories, {len(samples)} samples, bounces per run {min(bounces)}..{max(bounces)}")
    centers = kmeanspp_centers(samples, config.dictionary.centers, config.seed, domain=system.domain)
    dictionary = build_rbf(
        centers, config.dictionary.width_scale, system.domain, augment_state=config.dictionary.augment_state
    )
    density = switching_band_density(system, centers)
    uniform = switching_band_density(system, samples)
    print(f"  Switching-band density ratio: centers {density:.2f}, raw samples {uniform:.2f}")

    print("\n[2/2] WRITING CENTERS")
    return [write_centers_csv(dictionary, out / "centers.csv")]


COMMANDS = {
    "encode": run_encode,
    "predict": run_predict,
    "spectrum": run_spectrum,
    "sweep": run_sweep,
    "kernel-check": run_kernel_check,
    "residuals": run_residuals,
    "centers": run_centers,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Direct Encoding of lifted linear models")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="Experiment config (JSON)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="Override a config value, e.g. analysis.eps=0.02 (repeatable)")
        p.add_argument("--out", default=None, help="Output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, default=None, help="Global seed (overrides config 'seed')")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    print("=" * 60)
    print(f"  Direct Encoding: {args.command}")
    print("=" * 60)

    try:
        config = load_config(args.config, args.set, output=args.out, seed=args.seed)
        out = Path(config.output)
        files = COMMANDS[args.command](config, out)
        write_manifest(out, config, args.command, files)
    except ArgumentError as e:
        print(f"\n  ERROR: {e}")
        return 2
    except NumericalError as e:
        print(f"\n  NUMERICAL ERROR: {type(e).__name__}: {e}")
        return 1

    print(f"\n  Outputs in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
