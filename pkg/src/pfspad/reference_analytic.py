"""Noise models for the two baselines: a full-well pixel and a binary-jot QIS."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .config import (ConfigError, ConventionalConfig, ExposureLike, QisConfig,
                     SpadConfig, exposure_seconds, qis_bin_count)
from .spad_analytic import _flux, _out, snr_from_rmse


def conventional_saturation_flux(cfg: ConventionalConfig, exposure: ExposureLike) -> float:
    """Flux N_fwc/(qT) at which the well fills."""
    return cfg.full_well / (cfg.quantum_efficiency * exposure_seconds(exposure))


def conventional_rmse_snr(phi, cfg: ConventionalConfig, exposure: ExposureLike):
    """Return ``(rmse, snr_db)``; beyond the full well these are +inf and −inf."""
    phi = _flux(phi)
    T = exposure_seconds(exposure)
    q, sr = cfg.quantum_efficiency, cfg.read_noise
    signal = q * phi * T
    below = phi < conventional_saturation_flux(cfg, exposure)
    with np.errstate(divide="ignore", invalid="ignore"):
        rmse = np.where(below, np.sqrt(signal + sr * sr) / (q * T), np.inf)
        snr = np.where(below, 10.0 * np.log10(signal ** 2 / (signal + sr * sr)), -np.inf)
    return _out(rmse), _out(snr)


def qis_mean_counts(phi, cfg: QisConfig, exposure: ExposureLike):
    """Expected number of filled bins N(1 − exp(−qΦτb))."""
    phi = _flux(phi)
    n_bins = qis_bin_count(cfg, exposure)
    return _out(-n_bins * np.expm1(-cfg.quantum_efficiency * phi * cfg.bin_width))


def qis_read_noise_bias(phi, cfg: QisConfig):
    """Flux bias from read-noise false positives in empty bins (clamped at 0)."""
    phi = _flux(phi)
    if cfg.read_noise == 0:
        return _out(np.zeros_like(phi))
    false_pos = 1.0 - special.erf(1.0 / (2.0 * math.sqrt(2.0) * cfg.read_noise))
    bias = 0.5 * (1.0 / (cfg.quantum_efficiency * cfg.bin_width) - phi) * false_pos
    return _out(np.maximum(0.0, bias))


def qis_rmse_snr(phi, cfg: QisConfig, exposure: ExposureLike):
    """Return ``(rmse, snr_db)`` of the QIS log estimator (Gaussian approximation)."""
    phi = _flux(phi)
    T = exposure_seconds(exposure)
    qis_bin_count(cfg, exposure)
    q, tb = cfg.quantum_efficiency, cfg.bin_width
    x = q * phi * tb
    # (1 - e^-x) / e^-x == expm1(x); large x overflows to +inf, which is the limit
    with np.errstate(over="ignore"):
        var = np.expm1(x) / (q * q * T * tb)
    rmse = np.sqrt(np.asarray(qis_read_noise_bias(phi, cfg)) ** 2 + var)
    # zero flux has no meaningful SNR; report the -inf sentinel
    snr = np.full(rmse.shape, -np.inf)
    pos = phi > 0
    if np.any(pos):
        snr[pos] = snr_from_rmse(phi[pos], rmse[pos])
    return _out(rmse), _out(snr)


def estimator_slope_gap(count, spad: SpadConfig, qis: QisConfig, exposure: ExposureLike):
    """Derivatives dΦ̂/dN of the SPAD and QIS estimators at the same count.

    Requires τb = τd.  Returns ``(d_spad, d_qis)``; d_qis < d_spad on the whole
    open range 0 < N < T/τb.
    """
    T = exposure_seconds(exposure)
    if not math.isclose(spad.dead_time, qis.bin_width, rel_tol=1e-12):
        raise ConfigError("estimator_slope_gap needs bin_width == dead_time")
    n = np.asarray(count, dtype=float)
    if np.any(n <= 0) or np.any(n * qis.bin_width >= T):
        raise ValueError("count must lie in the open range (0, T/tau_b)")
    d_qis = 1.0 / (qis.quantum_efficiency * (T - n * qis.bin_width))
    d_spad = T / (spad.quantum_efficiency * (T - n * spad.dead_time) ** 2)
    return _out(d_spad), _out(d_qis)
