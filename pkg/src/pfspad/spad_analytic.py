"""Closed-form and exact-numerical noise models of a free-running SPAD pixel.

All flux arguments may be scalars or numpy arrays; results broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .config import ExposureLike, SpadConfig, exposure_seconds

#: Largest floor(T/tau_d) for which `count_pmf_exact` will build a pmf.
DEFAULT_SUPPORT_CAP = 10**6

START_CONVENTIONS = ("stationary", "detection", "idle")


def _flux(phi):
    phi = np.asarray(phi, dtype=float)
    if np.any(~np.isfinite(phi)) or np.any(phi < 0):
        raise ValueError("flux must be finite and >= 0")
    return phi


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def expected_counts(phi, cfg: SpadConfig, exposure: ExposureLike):
    """Mean detected count qΦT / (1 + qΦτd); tends to T/τd as Φ grows."""
    phi = _flux(phi)
    T = exposure_seconds(exposure)
    x = cfg.quantum_efficiency * phi
    return _out(x * T / (1.0 + x * cfg.dead_time))


def count_variance(phi, cfg: SpadConfig, exposure: ExposureLike):
    """Count variance qΦT / (1 + qΦτd)^3 (renewal central limit)."""
    phi = _flux(phi)
    T = exposure_seconds(exposure)
    x = cfg.quantum_efficiency * phi
    return _out(x * T / (1.0 + x * cfg.dead_time) ** 3)


def variance_peak_flux(cfg: SpadConfig) -> float:
    """Flux 1/(2qτd) at which `count_variance` is largest."""
    return 1.0 / (2.0 * cfg.quantum_efficiency * cfg.dead_time)


@dataclass(frozen=True)
class RmseBreakdown:
    """Flux-error budget of the count-based estimator (photons/s units)."""

    bias_dark: object
    bias_afterpulse: object
    var_shot: object
    var_quantization: object

    @property
    def rmse(self):
        bias = np.add(self.bias_dark, self.bias_afterpulse)
        return _out(np.sqrt(bias ** 2 + np.add(self.var_shot, self.var_quantization)))


def afterpulse_bias(phi, cfg: SpadConfig):
    """Afterpulsing flux bias p_ap·qΦ(1+Φτd)·exp(−qΦτd)."""
    phi = _flux(phi)
    q, td = cfg.quantum_efficiency, cfg.dead_time
    return _out(cfg.afterpulse_prob * q * phi * (1.0 + phi * td) * np.exp(-q * phi * td))


def rmse_approx(phi, cfg: SpadConfig, exposure: ExposureLike,
                jitter_corrected: bool = False) -> RmseBreakdown:
    """Gaussian-approximation error budget of the count estimator.

    With ``jitter_corrected`` the shot-noise term picks up the dead-time
    variance: Φ(1 + q²Φ²σd²)(1 + qΦμd)/(qT), with μd the mean dead time.
    """
    phi = _flux(phi)
    T = exposure_seconds(exposure)
    q, td = cfg.quantum_efficiency, cfg.dead_time
    x = q * phi * td
    var_shot = phi * (1.0 + x) / (q * T)
    if jitter_corrected:
        var_shot = var_shot * (1.0 + (q * phi * cfg.jitter_sigma) ** 2)
    var_quant = (1.0 + x) ** 4 / (12.0 * q * q * T * T)
    bias_dark = np.full_like(phi, cfg.dark_rate)
    return RmseBreakdown(
        bias_dark=_out(bias_dark),
        bias_afterpulse=afterpulse_bias(phi, cfg),
        var_shot=_out(var_shot),
        var_quantization=_out(var_quant),
    )


def snr_from_rmse(phi, rmse):
    """SNR in dB, 20·log10(Φ/RMSE).  An infinite RMSE maps to −inf dB."""
    phi = np.asarray(phi, dtype=float)
    rmse = np.asarray(rmse, dtype=float)
    if np.any(np.isnan(rmse)) or np.any(rmse <= 0) or np.any(np.isneginf(rmse)):
        raise ValueError("rmse must be positive (or +inf)")
    if np.any(phi <= 0) or np.any(~np.isfinite(phi)):
        raise ValueError("flux must be positive and finite")
    with np.errstate(divide="ignore"):
        snr = np.where(np.isposinf(rmse), -np.inf, 20.0 * np.log10(phi / rmse))
    return _out(snr)


def soft_saturation_flux(cfg: SpadConfig, exposure: ExposureLike) -> float:
    """Flux above which quantization variance dominates shot-noise variance.

    The two variances also cross at very low flux (where 1/(12q²T²) beats
    Φ/(qT)); this returns the upper crossing, beyond the count-variance peak.
    """
    T = exposure_seconds(exposure)
    q, td = cfg.quantum_efficiency, cfg.dead_time

    # var_quant - var_shot ∝ (1+x)^3 - 12 q T Φ ; positive for all larger Φ
    def gap(log_phi):
        phi = math.exp(log_phi)
        return (1.0 + q * phi * td) ** 3 - 12.0 * q * T * phi

    lo = math.log(variance_peak_flux(cfg))
    if gap(lo) > 0:
        # quantization already dominates at the shot-noise peak: walk down
        hi = lo
        while gap(lo) > 0:
            lo -= 1.0
            if lo < math.log(1e-300):
                raise ValueError("no soft saturation crossover")
        return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15))
    hi = lo
    while gap(hi) <= 0:
        hi += 1.0
    return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15))


# --- exact count distribution ---------------------------------------------------

@dataclass(frozen=True)
class CountPmf:
    """Probability mass function of the detected count; ``probs[n] = P(N_T = n)``."""

    probs: np.ndarray
    quantum_efficiency: float
    flux: float
    exposure: float
    dead_time: float
    start: str = "stationary"

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.probs.size)

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    def var(self) -> float:
        n = self.support
        m = self.mean()
        return float(np.dot((n - m) ** 2, self.probs))

    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c


def _gamma_cdf(n, lam, y):
    """P(Gamma(n, rate=lam) <= y), zero for y <= 0."""
    y = np.asarray(y, dtype=float)
    return np.where(y > 0, special.gammainc(n, lam * np.maximum(y, 0.0)), 0.0)


def _gamma_cdf_integral(n, lam, y):
    """∫_0^y P(Gamma(n, lam) <= x) dx = y·G_n(y) − (n/lam)·G_{n+1}(y)."""
    y = np.asarray(y, dtype=float)
    yp = np.maximum(y, 0.0)
    val = yp * special.gammainc(n, lam * yp) - (n / lam) * special.gammainc(n + 1, lam * yp)
    return np.where(y > 0, np.maximum(val, 0.0), 0.0)


def count_survival(n, rate: float, exposure: float, dead_time: float,
                   start: str = "stationary"):
    """P(N_T >= n) for n >= 1 under a given exposure-start convention.

    ``detection``: a (not counted) detection at t=0 opens a dead time, so the
    n-th detection time is nτd + Gamma(n).  ``idle``: the pixel is armed at
    t=0, giving (n−1)τd + Gamma(n).  ``stationary``: the pixel has been
    free running; with probability λτd/(1+λτd) the shutter opens inside a
    dead time whose residual is uniform on (0, τd).
    """
    n = np.asarray(n, dtype=float)
    T, td, lam = exposure, dead_time, rate
    if start == "detection":
        return _gamma_cdf(n, lam, T - n * td)
    a = T - (n - 1.0) * td
    live = _gamma_cdf(n, lam, a)
    if start == "idle":
        return live
    if start != "stationary":
        raise ValueError(f"unknown start convention {start!r}; expected one of {START_CONVENTIONS}")
    p_dead = lam * td / (1.0 + lam * td)
    dead = (_gamma_cdf_integral(n, lam, a) - _gamma_cdf_integral(n, lam, a - td)) / td
    return (1.0 - p_dead) * live + p_dead * np.clip(dead, 0.0, 1.0)


def count_pmf_exact(phi: float, cfg: SpadConfig, exposure: ExposureLike,
                    start: str = "stationary",
                    support_cap: int = DEFAULT_SUPPORT_CAP) -> CountPmf:
    """Exact pmf of the detected count for a constant flux (no dark/afterpulse).

    Built as differences of the renewal survival function P(N >= n); the
    vector telescopes, so it sums to one to rounding.  The support is
    0..floor(T/τd) for the ``detection`` start and one larger otherwise.
    """
    if start not in START_CONVENTIONS:
        raise ValueError(f"unknown start convention {start!r}; expected one of {START_CONVENTIONS}")
    phi = float(_flux(phi))
    T = exposure_seconds(exposure)
    td = cfg.dead_time
    m = math.floor(T / td)
    if m > support_cap:
        raise ValueError(
            f"count support floor(T/tau_d) = {m} exceeds cap {support_cap}; "
            "use a smaller T/tau_d or the approximate model")
    size = m + 1 if start == "detection" else m + 2
    lam = cfg.quantum_efficiency * phi
    probs = np.zeros(size)
    if lam == 0.0:
        probs[0] = 1.0
    else:
        surv = np.ones(size + 1)
        surv[1:size] = count_survival(np.arange(1, size), lam, T, td, start)
        surv[size] = 0.0
        # survival must be non-increasing; clamp rounding wiggles
        surv = np.minimum.accumulate(np.clip(surv, 0.0, 1.0))
        probs = surv[:-1] - surv[1:]
    return CountPmf(probs=probs, quantum_efficiency=cfg.quantum_efficiency, flux=phi,
                    exposure=T, dead_time=td, start=start)


def rmse_exact(phi: float, cfg: SpadConfig, exposure: ExposureLike,
               start: str = "stationary",
               support_cap: int = DEFAULT_SUPPORT_CAP) -> float:
    """RMSE of the count estimator computed from the exact count pmf.

    Counts at or beyond the exposure capacity (nτd >= T) have no finite
    estimate and are left out of the sum.
    """
    pmf = count_pmf_exact(phi, cfg, exposure, start=start, support_cap=support_cap)
    T, td, q = pmf.exposure, pmf.dead_time, cfg.quantum_efficiency
    n = pmf.support.astype(float)
    ok = n * td < T * (1.0 - 1e-12)
    est = n[ok] / (q * (T - n[ok] * td))
    mse_var = math.fsum(pmf.probs[ok] * (est - pmf.flux) ** 2)
    bias = cfg.dark_rate + afterpulse_bias(pmf.flux, cfg)
    return math.sqrt(bias * bias + mse_var)
