"""Batch command-line front end.

Commands: simulate | fit | experiment | power | constants.  Every
command is deterministic given its configuration and seed; --threads
only changes wall time.  Outputs are pals-histogram/pals-report text
files carrying the producing manifest as '#' header lines, plus a
<out>.manifest sidecar that additionally records the wall-clock
duration (kept out of the main file so re-runs stay byte-identical).

Exit codes: 0 success, 1 failed constants check, 2 configuration or
input-format error, 3 I/O error, 4 fit did not converge (the report is
still written).
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .config import Config, ConfigError, load_config
from .constants import (
    RESIDUAL_TOLERANCE,
    n3_from_alpha,
    planck_identity_residual,
    planck_mass,
)
from .fitting import (
    estimate_background,
    fit_mle,
    model_from_estimates,
    param_names,
)
from .formats import (
    FormatError,
    read_histogram,
    write_histogram,
    write_report,
)
from .hypotests import (
    doubling_fitspec,
    lr_test_doubling,
    lr_test_rate_shift,
    power_scan,
    rate_shift_fitspec,
)
from .model import FWHM_TO_SIGMA, DomainError, expected_counts
from .simulate import apply_scenario, simulate_spectrum

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NOT_CONVERGED = 4


def _manifest(command: str, **fields) -> list[str]:
    lines = [f"manifest.command={command}", f"manifest.tool=palslab {__version__}"]
    for key in sorted(fields):
        if fields[key] is not None:
            lines.append(f"manifest.{key}={fields[key]}")
    return lines


def _write_sidecar(out_path, manifest_lines, started):
    duration = time.monotonic() - started
    with open(f"{out_path}.manifest", "w", newline="\n") as fh:
        for line in manifest_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# manifest.duration_s={duration:.3f}\n")


def _load(path) -> Config:
    return load_config(path)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(config_path, seed, out_path, threads=1) -> int:
    started = time.monotonic()
    config = _load(config_path)
    cfg = config.spectrometer()
    model = config.model(default_fwhm=cfg.timing_fwhm)
    scenario = config.scenario()
    run = config.run()
    if seed is None:
        seed = run.seed
    hist = simulate_spectrum(
        cfg,
        scenario,
        model,
        seed,
        n_events=run.n_events,
        n_streams=run.n_streams,
        threads=threads,
    )
    manifest = _manifest(
        "simulate", config=config_path, seed=seed, out=out_path
    )
    write_histogram(out_path, hist, header_comments=manifest)
    _write_sidecar(out_path, manifest, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _defaults_from_histogram(hist) -> dict:
    """Starting values recorded by the simulator, if present."""
    meta = hist.metadata
    defaults = {}
    if "model.rates_per_us" in meta:
        for i, value in enumerate(meta["model.rates_per_us"].split()):
            defaults[f"rate{i}"] = float(value)
    if "model.intensities" in meta:
        for i, value in enumerate(meta["model.intensities"].split()):
            defaults[f"intensity{i}"] = float(value)
    for key, name in (
        ("model.prompt_fraction", "prompt_fraction"),
        ("model.t0_ns", "t0"),
        ("model.fwhm_ns", "fwhm"),
    ):
        if key in meta:
            defaults[name] = float(meta[key])
    if "accepted_events" in meta:
        defaults["total_events"] = float(meta["accepted_events"])
    else:
        defaults["total_events"] = float(hist.counts.sum())
    defaults["background"] = _background_default(hist, defaults)
    return defaults


def _background_default(hist, defaults) -> float:
    t0 = defaults.get("t0")
    fwhm = defaults.get("fwhm", 0.0)
    if t0 is not None:
        sigma = fwhm * FWHM_TO_SIGMA
        last = int((t0 - 6.0 * sigma) / hist.channel_width)
        if last >= 4:
            est = estimate_background(hist, (0, last), t0, fwhm)
            return est.mean
    return 0.0


def _rates_per_us(estimates, rate_unit, n_components):
    scale = 1.0 if rate_unit == "per_us" else 1000.0
    theta = dict(estimates)
    for i in range(n_components):
        theta[f"rate{i}"] = theta[f"rate{i}"] * scale
    return theta


def _fit_report_entries(result, spec):
    entries = {
        "converged": result.converged,
        "deviance": result.deviance,
        "degrees_of_freedom": result.degrees_of_freedom,
        "n_iterations": result.n_iterations,
        "gradient_norm": result.gradient_norm,
        "singular_information": result.singular,
        "message": result.message,
        "rate_unit": spec.rate_unit,
        "free_parameters": " ".join(result.free_names),
    }
    for name in param_names(spec.n_components):
        entries[f"estimate.{name}"] = result.estimates[name]
    for name in result.free_names:
        entries[f"error.{name}"] = result.errors.get(name, float("nan"))
    return entries


def _residual_table(hist, mu):
    counts = hist.counts.astype(float)
    pearson = (counts - mu) / np.sqrt(np.maximum(mu, 1e-12))
    rows = [
        (k, float(mu[k]), int(counts[k]), float(pearson[k]))
        for k in range(hist.n_channels)
    ]
    return ("channel expected observed pearson".split(), rows)


def cmd_fit(histogram_path, fitspec_path, report_path) -> int:
    started = time.monotonic()
    hist = read_histogram(histogram_path)
    config = _load(fitspec_path)
    defaults = _defaults_from_histogram(hist)
    spec = config.fitspec(defaults)
    manifest = _manifest(
        "fit", config=fitspec_path, histogram=histogram_path, out=report_path
    )
    if not spec.free_names:
        # evaluation-only: report the deviance of the fixed model
        theta = _rates_per_us(
            {n: s.value for n, s in spec.params.items()}, spec.rate_unit,
            spec.n_components,
        )
        model = model_from_estimates(theta, spec.n_components)
        mu = expected_counts(model, hist.grid)
        from .fitting import poisson_deviance

        entries = {
            "converged": True,
            "evaluation_only": True,
            "deviance": poisson_deviance(hist.counts, mu),
            "degrees_of_freedom": hist.n_channels,
            "rate_unit": spec.rate_unit,
        }
        for name in param_names(spec.n_components):
            entries[f"estimate.{name}"] = spec.params[name].value
        write_report(
            report_path, entries, tables={"residuals": _residual_table(hist, mu)},
            comments=manifest,
        )
        _write_sidecar(report_path, manifest, started)
        return EXIT_OK
    result = fit_mle(hist, spec)
    theta = _rates_per_us(result.estimates, spec.rate_unit, spec.n_components)
    model = model_from_estimates(theta, spec.n_components)
    mu = expected_counts(model, hist.grid)
    write_report(
        report_path,
        _fit_report_entries(result, spec),
        tables={"residuals": _residual_table(hist, mu)},
        comments=manifest,
    )
    _write_sidecar(report_path, manifest, started)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def cmd_experiment(config_path, seed, out_dir, threads=1) -> int:
    import os

    started = time.monotonic()
    config = _load(config_path)
    cfg = config.spectrometer()
    base = config.model(default_fwhm=cfg.timing_fwhm)
    scenario = config.scenario()
    run = config.run()
    settings = config.experiment()
    if seed is None:
        seed = run.seed
    os.makedirs(out_dir, exist_ok=True)
    background = cfg.accidental_rate * cfg.live_time / cfg.n_channels
    background_init = background if background > 0 else None
    manifest = _manifest(
        "experiment",
        config=config_path,
        seed=seed,
        out=out_dir,
        protocol=settings["protocol"],
    )
    report_path = os.path.join(out_dir, "experiment_report.txt")
    if settings["protocol"] == "doubling":
        arms = {}
        for index, orientation in enumerate(("perpendicular", "parallel")):
            arm_scenario = replace(scenario, field_orientation=orientation)
            arms[orientation] = simulate_spectrum(
                cfg,
                arm_scenario,
                base,
                seed,
                n_events=run.n_events,
                n_streams=run.n_streams,
                threads=threads,
                stream_base=index * run.n_streams,
            )
            write_histogram(
                os.path.join(out_dir, f"{orientation}.hist"),
                arms[orientation],
                header_comments=manifest,
            )
        observed = apply_scenario(
            base, replace(scenario, field_orientation="perpendicular")
        )
        accepted = np.mean(
            [float(h.metadata["accepted_events"]) for h in arms.values()]
        )
        if config.has("fitspec"):
            spec = config.fitspec(
                _defaults_from_histogram(arms["perpendicular"])
            )
        else:
            spec = doubling_fitspec(observed, accepted, background_init)
        result = lr_test_doubling(
            arms["perpendicular"], arms["parallel"], spec, settings["significance"]
        )
        factor_ref, factor_err = scenario.comparative_factor
        suppressed_factor = (
            1.0 / (1.0 - scenario.doubling_transfer)
            if scenario.doubling_transfer < 1.0
            else float("inf")
        )
        entries = {
            "protocol": "doubling",
            "null_hypothesis": result.null_hypothesis,
            "statistic": result.statistic,
            "p_value": result.p_value,
            "effective_sigma": result.effective_sigma,
            "significance": result.significance,
            "decision": "reject" if result.reject else "fail to reject",
            "converged": result.converged,
            "intensity_perpendicular": result.details["intensity_perpendicular"],
            "intensity_parallel": result.details["intensity_parallel"],
            "intensity_ratio_par_over_perp": result.details[
                "intensity_ratio_par_over_perp"
            ],
            "model_suppression_factor": suppressed_factor,
            "reference_comparative_factor": factor_ref,
            "reference_comparative_factor_error": factor_err,
        }
    else:
        hist = simulate_spectrum(
            cfg,
            scenario,
            base,
            seed,
            n_events=run.n_events,
            n_streams=run.n_streams,
            threads=threads,
        )
        write_histogram(
            os.path.join(out_dir, "spectrum.hist"), hist, header_comments=manifest
        )
        lambda_null = settings["lambda_null"]
        if lambda_null is None:
            lambda_null = base.components[-1].rate
        if config.has("fitspec"):
            spec = config.fitspec(_defaults_from_histogram(hist))
        else:
            spec = rate_shift_fitspec(
                base,
                float(hist.metadata["accepted_events"]),
                background_init,
            )
        result = lr_test_rate_shift(
            hist, lambda_null, spec, settings["significance"]
        )
        entries = {
            "protocol": "rate_shift",
            "null_hypothesis": result.null_hypothesis,
            "statistic": result.statistic,
            "p_value": result.p_value,
            "effective_sigma": result.effective_sigma,
            "significance": result.significance,
            "decision": "reject" if result.reject else "fail to reject",
            "converged": result.converged,
            "lambda_null_per_us": result.details["lambda_null_per_us"],
            "lambda_hat_per_us": result.details["lambda_hat_per_us"],
            "lambda_hat_error_per_us": result.details["lambda_hat_error_per_us"],
            "configured_lambda_shift": scenario.lambda_shift,
        }
    write_report(report_path, entries, comments=manifest)
    _write_sidecar(report_path, manifest, started)
    if not result.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


def cmd_power(config_path, seed, out_path, threads=1, grid=None, replicas=None) -> int:
    started = time.monotonic()
    config = _load(config_path)
    cfg = config.spectrometer()
    base = config.model(default_fwhm=cfg.timing_fwhm)
    scenario = config.scenario()
    run = config.run()
    settings = config.power()
    if grid is not None:
        settings["grid"] = grid
    if replicas is not None:
        settings["replicas"] = replicas
    if settings["replicas"] < 1:
        raise ConfigError("power scan needs at least one replica")
    if seed is None:
        seed = run.seed
    points = power_scan(
        cfg,
        base,
        scenario,
        settings["protocol"],
        settings["grid"],
        settings["replicas"],
        settings["significance"],
        seed,
        n_streams=run.n_streams,
        threads=threads,
    )
    rows = [
        (
            p.n_events,
            p.power,
            p.ci_low,
            p.ci_high,
            p.n_replicas,
            -1 if p.n_reject is None else p.n_reject,
            p.n_invalid,
        )
        for p in points
    ]
    min_n = next(
        (p.n_events for p in points if p.n_events > 0 and p.power >= 0.5), None
    )
    entries = {
        "protocol": settings["protocol"],
        "significance": settings["significance"],
        "replicas": settings["replicas"],
        "scenario_mode": scenario.mode,
        "min_grid_n_with_power_ge_half": "none" if min_n is None else min_n,
    }
    manifest = _manifest("power", config=config_path, seed=seed, out=out_path)
    write_report(
        out_path,
        entries,
        tables={
            "power_curve": (
                "n_events power ci_low ci_high replicas n_reject n_invalid".split(),
                rows,
            )
        },
        comments=manifest,
    )
    _write_sidecar(out_path, manifest, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


def cmd_constants(config_path=None) -> int:
    if config_path is not None:
        constants = _load(config_path).constants()
    else:
        from .constants import PhysicalConstants

        constants = PhysicalConstants()
    n3 = n3_from_alpha(constants.alpha)
    mass = planck_mass(constants)
    residual = planck_identity_residual(constants)
    passed = residual <= RESIDUAL_TOLERANCE
    print(f"alpha = {constants.alpha!r}")
    print(f"site_count_n3 = {n3!r}")
    print(f"planck_mass_g = {mass!r}")
    print(f"n3_times_nucleon_pair_g = {n3 * (constants.m_p + constants.m_e)!r}")
    print(f"identity_residual = {residual!r}")
    print(f"tolerance = {RESIDUAL_TOLERANCE!r}")
    print(f"check = {'pass' if passed else 'fail'}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="palslab",
        description="lifetime-spectroscopy lab: simulate, fit, test, scan",
    )
    parser.add_argument("--version", action="version", version=f"palslab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed (64-bit)")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="worker threads (speed only, never results)",
        )
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("simulate", help="generate one spectrum")
    common(p)
    p = sub.add_parser("fit", help="fit a histogram")
    p.add_argument("histogram", help="pals-histogram v1 file")
    p.add_argument("--config", required=True, help="fit specification file")
    p.add_argument("--out", required=True, help="report path")
    p = sub.add_parser("experiment", help="paired-orientation or rate-shift protocol")
    common(p)
    p = sub.add_parser("power", help="Monte Carlo power scan")
    common(p)
    p.add_argument("--grid", help="comma-separated event counts (overrides config)")
    p.add_argument(
        "--replicas", type=int, default=None, help="replicas per grid point"
    )
    p = sub.add_parser("constants", help="closed-form identity checks")
    p.add_argument("--config", default=None, help="optional constant overrides")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.seed, args.out, args.threads)
        if args.command == "fit":
            return cmd_fit(args.histogram, args.config, args.out)
        if args.command == "experiment":
            return cmd_experiment(args.config, args.seed, args.out, args.threads)
        if args.command == "power":
            grid = None
            if args.grid:
                grid = [int(float(v)) for v in args.grid.replace(",", " ").split()]
            return cmd_power(
                args.config, args.seed, args.out, args.threads, grid, args.replicas
            )
        if args.command == "constants":
            return cmd_constants(args.config)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, FormatError, DomainError) as exc:
        print(f"palslab {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"palslab {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
