"""Time-domain Monte Carlo of photon detection for SPAD, conventional and QIS pixels.

Random streams
--------------
Every simulated pixel/trial draws from its own ``numpy.random.Philox``
(Philox4x64-10) generator whose 128-bit key is ``(master_seed, stream_id)``
taken as two unsigned 64-bit words.  The mapping is injective and does not
depend on the order in which streams are consumed, so results are identical
for any thread count.

Exposure start
--------------
A free-running pixel is already running when the shutter opens.  The
default ``start="stationary"`` draws the first detection from the
equilibrium law of the renewal process (the shutter may open inside a dead
time).  ``"detection"`` places an uncounted detection at t=0 and ``"idle"``
arms the pixel at t=0.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import (ConventionalConfig, ExposureLike, QisConfig, SpadConfig,
                     exposure_seconds, qis_bin_count, validate_spad_config)
from .flux_estimators import DetectionTrace, flux_array
from .spad_analytic import START_CONVENTIONS, count_pmf_exact

THREADS_ENV = "PFSPAD_THREADS"
_U64 = (1 << 64) - 1


def default_threads() -> int:
    """Worker count from ``$PFSPAD_THREADS`` (default 1)."""
    value = os.environ.get(THREADS_ENV, "").strip()
    if not value:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v <= _U64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {v!r}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, stream_id)


def _as_seed(seed) -> SeedSpec:
    return seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))


# --- PF-SPAD -----------------------------------------------------------------------

def _first_detection(rng, lam, cfg: SpadConfig, start: str) -> float:
    if start == "idle":
        return rng.exponential(1.0 / lam)
    # stationary: the shutter opens inside a dead time with probability λτd/(1+λτd)
    p_dead = lam * cfg.dead_time / (1.0 + lam * cfg.dead_time)
    u_state, u_residual = rng.random(2)
    residual = u_residual * cfg.dead_time if u_state < p_dead else 0.0
    return residual + rng.exponential(1.0 / lam)


def _spad_times(rng: np.random.Generator, phi: float, cfg: SpadConfig, T: float,
                start: str) -> np.ndarray:
    """Detection times in (0, T], generated one inter-detection gap at a time.

    Photons arriving during a dead time are lost and the arrival process is
    memoryless, so the wait after a dead time ends is again Exp(qΦ + dark).
    An afterpulse fires exactly when the dead time ends, which makes that
    gap equal to the realized dead time alone.
    """
    lam = cfg.quantum_efficiency * phi + cfg.dark_rate
    if lam <= 0:
        return np.empty(0)
    if start == "detection":
        last = 0.0
        pieces = []
    else:
        first = _first_detection(rng, lam, cfg, start)
        if first > T:
            return np.empty(0)
        last = first
        pieces = [np.array([first])]
    td, sd, pap = cfg.dead_time, cfg.jitter_sigma, cfg.afterpulse_prob
    mean_gap = td + (1.0 - pap) / lam
    while True:
        expected = (T - last) / mean_gap
        k = int(expected + 4.0 * math.sqrt(expected) + 16)
        dead = td if sd == 0 else np.maximum(0.0, rng.normal(td, sd, k))
        wait = rng.exponential(1.0 / lam, k)
        if pap > 0:
            wait[rng.random(k) < pap] = 0.0
        times = last + np.cumsum(dead + wait)
        idx = int(np.searchsorted(times, T, side="right"))
        pieces.append(times[:idx])
        if idx < k:
            break
        last = times[-1]
    return np.concatenate(pieces) if pieces else np.empty(0)


def _check_start(start: str) -> None:
    if start not in START_CONVENTIONS:
        raise ValueError(f"unknown start convention {start!r}; expected one of {START_CONVENTIONS}")


def simulate_spad_trace(phi: float, cfg: SpadConfig, exposure: ExposureLike, seed,
                        start: str = "stationary") -> DetectionTrace:
    """Simulate one exposure of a PF-SPAD pixel and return its detection trace."""
    _check_start(start)
    validate_spad_config(cfg, exposure)
    T = exposure_seconds(exposure)
    rng = _as_seed(seed).generator()
    return DetectionTrace(_spad_times(rng, float(phi), cfg, T, start), T)


def simulate_spad_trace_events(phi: float, cfg: SpadConfig, exposure: ExposureLike, seed,
                               start: str = "stationary") -> DetectionTrace:
    """Photon-by-photon reference simulator (slow; use at moderate flux).

    Every arrival of rate qΦ + dark is generated and tested against the
    dead time of the last accepted event.  Each accepted event schedules,
    with probability p_ap, one afterpulse candidate at the end of its dead
    time; candidates go through the same acceptance test.
    """
    _check_start(start)
    validate_spad_config(cfg, exposure)
    T = exposure_seconds(exposure)
    rng = _as_seed(seed).generator()
    lam = cfg.quantum_efficiency * phi + cfg.dark_rate
    td, sd, pap = cfg.dead_time, cfg.jitter_sigma, cfg.afterpulse_prob

    def draw_dead():
        return td if sd == 0 else max(0.0, rng.normal(td, sd))

    t_last, dead = -math.inf, td
    if start == "detection":
        t_last, dead = 0.0, draw_dead()
    elif start == "stationary" and lam > 0:
        p_dead = lam * td / (1.0 + lam * td)
        u_state, u_residual = rng.random(2)
        if u_state < p_dead:
            t_last = u_residual * td - td
    accepted = []
    afterpulses = []

    def accept(t):
        nonlocal t_last, dead
        if t > 0:
            accepted.append(t)
        t_last, dead = t, draw_dead()
        if pap > 0 and rng.random() < pap:
            afterpulses.append(t + dead)

    if start == "detection" and pap > 0 and rng.random() < pap:
        afterpulses.append(dead)
    t = 0.0
    while t <= T:
        t_next = t + rng.exponential(1.0 / lam) if lam > 0 else math.inf
        while afterpulses and afterpulses[0] <= min(t_next, T):
            t_ap = afterpulses.pop(0)
            if t_ap >= t_last + dead:
                accept(t_ap)
        t = t_next
        if t > T:
            break
        if t >= t_last + dead:
            accept(t)
    return DetectionTrace(np.array(accepted), T)


def _spad_count_fast(rng, phi, cfg: SpadConfig, T: float, start: str, cache: dict) -> int:
    # dark counts are a Poisson rate added to qΦ: fold them into an effective flux
    phi_eff = phi + cfg.dark_rate / cfg.quantum_efficiency
    cdf = cache.get(phi_eff)
    if cdf is None:
        cdf = count_pmf_exact(phi_eff, cfg, T, start=start).cdf()
        cache[phi_eff] = cdf
    return int(np.searchsorted(cdf, rng.random(), side="right"))


# --- reference sensors ---------------------------------------------------------------

def _conventional_count(rng, phi, cfg: ConventionalConfig, T: float) -> int:
    mean = cfg.quantum_efficiency * phi * T
    if mean > 1e15:
        return cfg.full_well
    n = int(rng.poisson(mean))
    if cfg.read_noise > 0:
        n += int(round(rng.normal(0.0, cfg.read_noise)))
    return min(max(n, 0), cfg.full_well)


def simulate_conventional_count(phi: float, cfg: ConventionalConfig, exposure: ExposureLike,
                                seed) -> int:
    """Poisson photo-electrons plus rounded Gaussian read noise, clamped to [0, N_fwc]."""
    return _conventional_count(_as_seed(seed).generator(), float(phi), cfg,
                               exposure_seconds(exposure))


def _qis_count(rng, phi, cfg: QisConfig, T: float) -> int:
    n_bins = qis_bin_count(cfg, T)
    p_one = -math.expm1(-cfg.quantum_efficiency * phi * cfg.bin_width)
    return int(rng.binomial(n_bins, p_one))


def simulate_qis_count(phi: float, cfg: QisConfig, exposure: ExposureLike, seed) -> int:
    """Number of non-empty bins out of N = T/τb, each one with probability 1 − exp(−qΦτb)."""
    return _qis_count(_as_seed(seed).generator(), float(phi), cfg, exposure_seconds(exposure))


# --- batches ---------------------------------------------------------------------------

def _count_one(rng, phi, cfg, T, start, fast, cache):
    if isinstance(cfg, SpadConfig):
        if fast and cfg.afterpulse_prob == 0 and cfg.jitter_sigma == 0:
            return _spad_count_fast(rng, phi, cfg, T, start, cache)
        return _spad_times(rng, phi, cfg, T, start).size
    if isinstance(cfg, ConventionalConfig):
        return _conventional_count(rng, phi, cfg, T)
    if isinstance(cfg, QisConfig):
        return _qis_count(rng, phi, cfg, T)
    raise TypeError(f"unsupported sensor config {type(cfg).__name__}")


def simulate_counts(cfg, flux, exposure: ExposureLike, master_seed: int = 0,
                    stream_offset: int = 0, threads: int | None = None,
                    start: str = "stationary", fast: bool = False) -> np.ndarray:
    """Counts for an array of independent pixels/trials.

    Element ``i`` of the flattened ``flux`` array uses stream
    ``stream_offset + i``.  Output has the shape of ``flux``.
    """
    _check_start(start)
    T = exposure_seconds(exposure)
    if isinstance(cfg, SpadConfig):
        validate_spad_config(cfg, T)
    elif isinstance(cfg, QisConfig):
        qis_bin_count(cfg, T)
    flux = np.asarray(flux, dtype=float)
    if np.any(~np.isfinite(flux)) or np.any(flux < 0):
        raise ValueError("flux must be finite and >= 0")
    flat = flux.ravel()
    out = np.empty(flat.size, dtype=np.int64)
    master = int(master_seed)

    def work(lo, hi):
        cache = {}
        for i in range(lo, hi):
            rng = SeedSpec(master, stream_offset + i).generator()
            out[i] = _count_one(rng, float(flat[i]), cfg, T, start, fast, cache)

    threads = threads or default_threads()
    if threads <= 1 or flat.size < 2:
        work(0, flat.size)
    else:
        bounds = np.linspace(0, flat.size, min(threads * 4, flat.size) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, bounds[:-1], bounds[1:]))
    return out.reshape(flux.shape)


@dataclass(frozen=True)
class TrialStats:
    flux: float
    trials: int
    mean_count: float
    var_count: float
    mean_flux_hat: float
    rmse_flux_hat: float

    @property
    def snr_db(self) -> float:
        if math.isinf(self.rmse_flux_hat):
            return -math.inf
        return 20.0 * math.log10(self.flux / self.rmse_flux_hat)


TRIAL_STATS_HEADER = "flux_photons_per_s,trials,mean_count,var_count,mean_flux_hat,rmse_flux_hat"


def aggregate_trials(phi: float, counts, flux_hat) -> TrialStats:
    """Order-independent summary of one flux point (compensated sums)."""
    counts = np.asarray(counts, dtype=float)
    flux_hat = np.asarray(flux_hat, dtype=float)
    n = counts.size
    if n < 2:
        raise ValueError("need at least 2 trials")
    mean = math.fsum(counts) / n
    var = math.fsum((counts - mean) ** 2) / (n - 1)
    mean_hat = math.fsum(flux_hat) / n
    mse = math.fsum((flux_hat - phi) ** 2) / n
    return TrialStats(float(phi), n, mean, var, mean_hat, math.sqrt(mse))


def run_trials(cfg, flux_grid, trials: int, exposure: ExposureLike, master_seed: int = 0,
               threads: int | None = None, start: str = "stationary",
               fast: bool = False) -> list[TrialStats]:
    """Repeat the capture ``trials`` times per flux, estimate flux, summarize.

    Trial ``j`` at flux index ``i`` uses stream ``i * trials + j``.  Counts
    with no finite estimate (full well, full jot-cube, beyond SPAD
    capacity) count as infinite estimates.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    T = exposure_seconds(exposure)
    results = []
    for i, phi in enumerate(np.atleast_1d(np.asarray(flux_grid, dtype=float))):
        counts = simulate_counts(cfg, np.full(trials, phi), T, master_seed,
                                 stream_offset=i * trials, threads=threads,
                                 start=start, fast=fast)
        est, flagged = flux_array(counts, cfg, T)
        est = np.where(flagged, np.inf, est)
        results.append(aggregate_trials(phi, counts, est))
    return results


def write_trial_stats_csv(stats, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(TRIAL_STATS_HEADER + "\n")
        for s in stats:
            fh.write(f"{s.flux!r},{s.trials},{s.mean_count!r},{s.var_count!r},"
                     f"{s.mean_flux_hat!r},{s.rmse_flux_hat!r}\n")


def read_trial_stats_csv(path) -> list[TrialStats]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRIAL_STATS_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        rows = []
        for line in fh:
            if not line.strip():
                continue
            f, n, m, v, mh, r = line.strip().split(",")
            rows.append(TrialStats(float(f), int(n), float(m), float(v), float(mh), float(r)))
    return rows
