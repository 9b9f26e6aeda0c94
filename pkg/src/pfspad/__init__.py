"""Simulation and estimation toolkit for passive free-running SPAD imaging."""

__version__ = "0.1.0"

from .config import (ConfigError, ConventionalConfig, Exposure, QisConfig, SpadConfig,
                     load_config_file, validate_spad_config)
from .curves import SnrCurve, dynamic_range, snr_curve
from .flux_estimators import (DetectionTrace, EstimatorError, FluxEstimate,
                              estimate_conventional, estimate_from_counts,
                              estimate_from_interarrivals, estimate_qis)
from .hdr_pipeline import (CountImage, FluxImage, load_flux_image, reconstruct_flux,
                           rescale_dynamic_range, simulate_capture, tone_map, write_outputs)
from .photon_mc import SeedSpec, run_trials, simulate_counts, simulate_spad_trace
from .reference_analytic import conventional_rmse_snr, estimator_slope_gap, qis_rmse_snr
from .spad_analytic import (RmseBreakdown, count_pmf_exact, count_variance, expected_counts,
                            rmse_approx, rmse_exact, soft_saturation_flux, variance_peak_flux)
from .transformers import FluxReconstructor, GlobalToneMapper, SensorCapture

__all__ = [
    "ConfigError", "ConventionalConfig", "CountImage", "DetectionTrace", "EstimatorError",
    "Exposure", "FluxEstimate", "FluxImage", "FluxReconstructor", "GlobalToneMapper",
    "QisConfig", "RmseBreakdown", "SeedSpec", "SensorCapture", "SnrCurve", "SpadConfig",
    "conventional_rmse_snr", "count_pmf_exact", "count_variance", "dynamic_range",
    "estimate_conventional", "estimate_from_counts", "estimate_from_interarrivals",
    "estimate_qis", "estimator_slope_gap", "expected_counts", "load_config_file",
    "load_flux_image", "qis_rmse_snr", "reconstruct_flux", "rescale_dynamic_range",
    "rmse_approx", "rmse_exact", "run_trials", "simulate_capture", "simulate_counts",
    "simulate_spad_trace", "snr_curve", "soft_saturation_flux", "tone_map",
    "validate_spad_config", "variance_peak_flux", "write_outputs",
]
