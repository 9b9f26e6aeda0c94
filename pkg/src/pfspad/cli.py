"""Command-line front end: ``pfspad <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime failures.
Runtime failures also print one JSON line ``{"error": ..., "type": ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import __version__
from .config import (ConfigError, Exposure, SpadConfig, conventional_config_from_dict,
                     load_config_file, qis_config_from_dict, spad_config_from_dict)
from .curves import (CURVE_HEADER, dynamic_range, log_grid, read_curves_csv, snr_curve,
                     write_curve_rows)
from .flux_estimators import (EstimatorError, estimate_from_counts,
                              estimate_from_interarrivals)
from .hdr_pipeline import (FluxImage, PfmError, load_flux_image, render, rescale_dynamic_range,
                           two_patch_scene, write_pfm)
from .photon_mc import THREADS_ENV, run_trials, simulate_spad_trace
from .spad_analytic import (START_CONVENTIONS, count_variance, expected_counts, rmse_approx,
                            snr_from_rmse)

log = logging.getLogger("pfspad")

SENSOR_TAGS = {
    "spad": "spad_approx",
    "spad-exact": "spad_exact",
    "spad-jitter": "spad_jitter",
    "conventional": "conventional",
    "qis": "qis",
}
BREAKDOWN_HEADER = ("flux_photons_per_s,bias_dark,bias_afterpulse,var_shot,"
                    "var_quantization,rmse,snr_db")
VALIDATE_HEADER = "flux_photons_per_s,metric,empirical,analytic,tolerance,status"


class CliError(RuntimeError):
    pass


# --- config helpers -------------------------------------------------------------------

def _sensor_config(values: dict, sensor: str):
    if sensor.startswith("spad"):
        return spad_config_from_dict(values)
    if sensor == "conventional":
        return conventional_config_from_dict(values)
    if sensor == "qis":
        return qis_config_from_dict(values)
    raise CliError(f"unknown sensor {sensor!r}")


def _load(args, sensor: str):
    """Sensor config and exposure [s]; --exposure-s overrides the file."""
    values = load_config_file(args.config)
    exposure = args.exposure_s if getattr(args, "exposure_s", None) is not None \
        else values.get("exposure_s")
    if exposure is None:
        raise ConfigError("no exposure: pass --exposure-s or set exposure_s in the config")
    return _sensor_config(values, sensor), Exposure(exposure).duration


def _threads(args):
    return getattr(args, "threads", None)


# --- subcommands ------------------------------------------------------------------------

def cmd_snr_curve(args) -> int:
    cfg, T = _load(args, args.sensor)
    curve = snr_curve(SENSOR_TAGS[args.sensor], cfg, T, args.flux_min, args.flux_max,
                      args.points)
    curve.to_csv(args.out)
    log.info("wrote %d points to %s", curve.flux_grid.size, args.out)
    return 0


def cmd_noise_breakdown(args) -> int:
    cfg, T = _load(args, "spad")
    grid = log_grid(args.flux_min, args.flux_max, args.points)
    parts = rmse_approx(grid, cfg, T, jitter_corrected=args.jitter)
    rmse = np.asarray(parts.rmse)
    snr = snr_from_rmse(grid, rmse)
    with open(args.out, "w", newline="") as fh:
        fh.write(BREAKDOWN_HEADER + "\n")
        for i, phi in enumerate(grid):
            cols = [phi] + [float(np.asarray(getattr(parts, name))[i]) for name in
                            ("bias_dark", "bias_afterpulse", "var_shot", "var_quantization")]
            cols += [float(rmse[i]), float(snr[i])]
            fh.write(",".join(repr(float(c)) for c in cols) + "\n")
    return 0


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def cmd_exposure_sweep(args) -> int:
    values = load_config_file(args.config)
    cfg = _sensor_config(values, args.sensor)
    with open(args.out, "w", newline="") as fh:
        fh.write("exposure_s," + CURVE_HEADER + "\n")
        for T in args.exposures_s:
            curve = snr_curve(SENSOR_TAGS[args.sensor], cfg, Exposure(T).duration,
                              args.flux_min, args.flux_max, args.points)
            write_curve_rows(fh, curve, prefix=f"{T!r},")
            print(f"exposure_s={T!r} max_snr_db={curve.max_snr():.6f}")
    return 0


def cmd_simulate_trace(args) -> int:
    cfg, T = _load(args, "spad")
    trace = simulate_spad_trace(args.flux, cfg, T, args.seed, start=args.start)
    if args.out:
        trace.to_csv(args.out)
    print(f"count,{trace.count}")
    try:
        phi_counts = estimate_from_counts(trace.count, cfg, T).phi_hat
    except EstimatorError as exc:
        log.warning("count estimator: %s", exc)
        phi_counts = math.nan
    try:
        phi_times = estimate_from_interarrivals(trace, cfg).phi_hat
    except EstimatorError as exc:
        log.warning("timestamp estimator: %s", exc)
        phi_times = math.nan
    print(f"phi_hat_counts,{phi_counts!r}")
    print(f"phi_hat_timestamps,{phi_times!r}")
    return 0


def cmd_validate(args) -> int:
    if args.config:
        cfg, T = _load(args, "spad")
    else:
        cfg = SpadConfig(quantum_efficiency=0.4, dead_time=149.7e-9)
        T = args.exposure_s if args.exposure_s is not None else 5e-3
    stats = run_trials(cfg, args.flux, args.trials, T, master_seed=args.seed,
                       threads=_threads(args), fast=args.fast)
    pure = cfg.afterpulse_prob == 0 and cfg.jitter_sigma == 0
    failed = False
    print(VALIDATE_HEADER)
    for s in stats:
        # dark counts add to the detection rate like photons do
        phi_eff = s.flux + cfg.dark_rate / cfg.quantum_efficiency
        mean_ref = float(expected_counts(phi_eff, cfg, T))
        var_ref = float(count_variance(phi_eff, cfg, T))
        se = math.sqrt(s.var_count / s.trials)
        snr_ref = float(snr_from_rmse(s.flux, rmse_approx(s.flux, cfg, T).rmse))
        rows = [
            ("mean_count", s.mean_count, mean_ref, f"3SE={3 * se:.6g}",
             abs(s.mean_count - mean_ref) <= 3 * se),
            ("var_count", s.var_count, var_ref, "10%",
             abs(s.var_count - var_ref) <= 0.1 * var_ref),
            ("snr_db", s.snr_db, snr_ref, "1dB", abs(s.snr_db - snr_ref) <= 1.0),
        ]
        for metric, emp, ref, tol, ok in rows:
            if not pure and metric != "snr_db":
                status = "SKIP"
            else:
                status = "PASS" if ok else "FAIL"
                failed |= not ok
            print(f"{s.flux!r},{metric},{emp!r},{ref!r},{tol},{status}")
    if failed:
        raise CliError("Monte Carlo disagrees with the analytic model")
    return 0


def cmd_render(args) -> int:
    cfg, T = _load(args, args.sensor)
    img = load_flux_image(args.input)
    if args.rescale_ratio is not None:
        img = rescale_dynamic_range(img, args.rescale_ratio, args.peak_flux)
    counts, flux, _, paths = render(img, cfg, T, seed=args.seed, fast=args.fast, key=args.key,
                                    threads=_threads(args), prefix=args.out_prefix)
    for kind in ("png", "pfm", "summary"):
        print(f"{kind},{paths[kind]}")
    return 0


def cmd_make_scene(args) -> int:
    img: FluxImage = two_patch_scene(args.height, args.width, args.dark, args.bright,
                                     args.channels)
    write_pfm(args.out, img.data.astype(np.float32))
    return 0


def _curve_dr(path, model, threshold):
    curves = read_curves_csv(path)
    if model is not None:
        curves = [c for c in curves if c.model_tag == model]
    if len(curves) != 1:
        raise CliError(f"{path}: expected one curve (use --model), "
                       f"found {[c.model_tag for c in read_curves_csv(path)]}")
    return dynamic_range(curves[0], threshold)


def _fmt_dr(value):
    return "none" if value is None else repr(float(value))


def _ratio(dr, other) -> float:
    if dr is None:
        return 0.0
    if other is None:
        return math.inf
    return float(dr) / float(other)


def cmd_dynamic_range(args) -> int:
    dr = _curve_dr(args.curve, args.model, args.threshold_db)
    print(f"dynamic_range,{_fmt_dr(dr)}")
    if args.versus:
        other = _curve_dr(args.versus, args.versus_model, args.threshold_db)
        print(f"versus_dynamic_range,{_fmt_dr(other)}")
        print(f"ratio,{_ratio(dr, other)!r}")
    return 0


# --- parser -----------------------------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_config(p, exposure=True):
    p.add_argument("--config", required=True, metavar="FILE",
                   help="key=value sensor config (q, tau_d_s [s], dark_rate_hz [1/s], p_ap, "
                        "jitter_sigma_s [s], exposure_s [s], fwc [e-], read_noise_e [e- rms], "
                        "qis_tau_b_s [s])")
    if exposure:
        p.add_argument("--exposure-s", type=float, metavar="SECONDS",
                       help="exposure time T [s]; overrides exposure_s in the config")


def _add_grid(p):
    p.add_argument("--flux-min", type=float, default=1.0, metavar="PHOTONS_PER_S",
                   help="lowest flux of the log grid [photons/s] (default 1)")
    p.add_argument("--flux-max", type=float, default=1e12, metavar="PHOTONS_PER_S",
                   help="highest flux of the log grid [photons/s] (default 1e12)")
    p.add_argument("--points", type=_positive_int, default=1001,
                   help="number of log-spaced grid points (default 1001)")


def _add_threads(p):
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV}, else 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfspad",
        description="PF-SPAD sensor models, Monte Carlo and HDR image simulation. "
                    "Units: seconds, photons/s, electrons, dB.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("snr-curve", help="analytic RMSE/SNR curve to CSV")
    p.add_argument("--sensor", choices=sorted(SENSOR_TAGS), required=True,
                   help="sensor model")
    _add_config(p)
    _add_grid(p)
    p.add_argument("--out", required=True, metavar="CSV", help="output CSV path")
    p.set_defaults(func=cmd_snr_curve)

    p = sub.add_parser("noise-breakdown", help="per-flux SPAD bias/variance terms to CSV")
    _add_config(p)
    _add_grid(p)
    p.add_argument("--jitter", action="store_true",
                   help="use the jitter-corrected shot variance")
    p.add_argument("--out", required=True, metavar="CSV",
                   help="output CSV (biases in photons/s, variances in (photons/s)^2, snr in dB)")
    p.set_defaults(func=cmd_noise_breakdown)

    p = sub.add_parser("exposure-sweep", help="one SNR curve per exposure time")
    p.add_argument("--sensor", choices=sorted(SENSOR_TAGS), required=True, help="sensor model")
    _add_config(p, exposure=False)
    p.add_argument("--exposures-s", type=_float_list, required=True, metavar="LIST",
                   help="comma-separated exposure times [s]")
    _add_grid(p)
    p.add_argument("--out", required=True, metavar="CSV", help="output CSV path")
    p.set_defaults(func=cmd_exposure_sweep)

    p = sub.add_parser("simulate-trace", help="simulate one SPAD exposure")
    _add_config(p)
    p.add_argument("--flux", type=float, required=True, metavar="PHOTONS_PER_S",
                   help="incident flux [photons/s]")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--start", choices=START_CONVENTIONS, default="stationary",
                   help="state of the pixel when the exposure opens")
    p.add_argument("--out", metavar="CSV", help="write detection timestamps [s] here")
    p.set_defaults(func=cmd_simulate_trace)

    p = sub.add_parser("validate", help="Monte Carlo vs analytic report (exit 1 on FAIL)")
    p.add_argument("--config", metavar="FILE",
                   help="SPAD config (default: q=0.4, tau_d_s=149.7e-9, no dark counts)")
    p.add_argument("--exposure-s", type=float, metavar="SECONDS",
                   help="exposure time T [s] (default 5e-3)")
    p.add_argument("--flux", type=_float_list, default=[1e8], metavar="LIST",
                   help="comma-separated fluxes [photons/s] (default 1e8)")
    p.add_argument("--trials", type=_positive_int, default=10000,
                   help="exposures per flux (default 10000)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--fast", action="store_true",
                   help="sample counts from the exact pmf (no afterpulsing/jitter only)")
    _add_threads(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("render", help="simulate a sensor capturing a PFM flux map")
    p.add_argument("--input", required=True, metavar="PFM",
                   help="ground-truth flux map [photons/s]")
    p.add_argument("--sensor", choices=["spad", "conventional", "qis"], required=True,
                   help="sensor model")
    _add_config(p)
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out-prefix", required=True, metavar="PREFIX",
                   help="writes PREFIX.png, PREFIX.pfm and PREFIX_summary.csv")
    p.add_argument("--fast", action="store_true",
                   help="SPAD: sample counts from the exact pmf when p_ap=0 and sigma_d=0")
    p.add_argument("--rescale-ratio", type=float, metavar="RATIO",
                   help="log-rescale the input to this max/min flux ratio (needs --peak-flux)")
    p.add_argument("--peak-flux", type=float, metavar="PHOTONS_PER_S",
                   help="maximum flux after rescaling [photons/s]")
    p.add_argument("--key", type=float, default=1.0,
                   help="tone-map key: scene log-average maps to key (default 1)")
    _add_threads(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("make-scene", help="write a two-patch test flux map as PFM")
    p.add_argument("--out", required=True, metavar="PFM", help="output path")
    p.add_argument("--height", type=_positive_int, default=64, help="pixels (default 64)")
    p.add_argument("--width", type=_positive_int, default=64, help="pixels (default 64)")
    p.add_argument("--dark", type=float, default=1e4, metavar="PHOTONS_PER_S",
                   help="left-half flux [photons/s] (default 1e4)")
    p.add_argument("--bright", type=float, default=1e9, metavar="PHOTONS_PER_S",
                   help="right-half flux [photons/s] (default 1e9)")
    p.add_argument("--channels", type=int, choices=[1, 3], default=1, help="1 or 3")
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("dynamic-range", help="print the dynamic range of an SNR curve")
    p.add_argument("--curve", required=True, metavar="CSV", help="curve CSV from snr-curve")
    p.add_argument("--model", help="model tag to pick from a multi-curve file")
    p.add_argument("--threshold-db", type=float, default=30.0, metavar="DB",
                   help="minimum SNR [dB] (default 30)")
    p.add_argument("--versus", metavar="CSV", help="second curve; also print the ratio")
    p.add_argument("--versus-model", help="model tag to pick from the --versus file")
    p.set_defaults(func=cmd_dynamic_range)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "rescale_ratio", None) is not None and args.peak_flux is None:
        parser.error("--rescale-ratio needs --peak-flux")
    try:
        return args.func(args)
    except (CliError, ConfigError, EstimatorError, PfmError, ValueError, TypeError,
            OSError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__,
                          "command": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
