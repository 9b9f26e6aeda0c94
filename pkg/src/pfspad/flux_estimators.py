"""Invert sensor measurements into flux estimates.

Scalar functions return a `FluxEstimate` and raise `EstimatorError` outside
their domain.  The ``*_array`` variants work on whole count arrays, never
raise on boundary counts, and return a mask of flagged (saturated/invalid)
entries instead; the image pipeline uses those.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import (ConventionalConfig, ExposureLike, QisConfig, SpadConfig,
                     exposure_seconds, qis_bin_count)

# counts with n*tau_d within this fraction of T are treated as "full"
CAPACITY_RTOL = 1e-12


class EstimatorError(ValueError):
    """Measurement outside the domain of an estimator."""


@dataclass(frozen=True)
class FluxEstimate:
    phi_hat: float
    method: str
    saturated: bool = False


@dataclass(frozen=True)
class DetectionTrace:
    """Detection timestamps (seconds) within one exposure ``(0, T]``."""

    timestamps: np.ndarray
    exposure: float

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        object.__setattr__(self, "timestamps", t)
        if t.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if t.size:
            if t[0] <= 0 or t[-1] > self.exposure:
                raise ValueError("timestamps must lie in (0, T]")
            if np.any(np.diff(t) <= 0):
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return self.timestamps.size

    @property
    def count(self) -> int:
        return self.timestamps.size

    def gaps(self) -> np.ndarray:
        """Inter-detection gaps, the first one measured from t=0."""
        return np.diff(self.timestamps, prepend=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t_s\n")
            for t in self.timestamps:
                fh.write(f"{float(t)!r}\n")

    @classmethod
    def from_csv(cls, path, exposure: ExposureLike) -> "DetectionTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["t_s"]:
                raise ValueError(f"{Path(path)}: expected header 't_s', got {header!r}")
            values = [float(row[0]) for row in reader if row]
        return cls(np.array(values), exposure_seconds(exposure))


def estimate_from_interarrivals(trace: DetectionTrace, cfg: SpadConfig) -> FluxEstimate:
    """Maximum-likelihood flux from the mean time of darkness X̄: 1/(q(X̄ − τd))."""
    if trace.count < 2:
        raise EstimatorError("insufficient detections (need at least 2)")
    mean_gap = float(np.mean(trace.gaps()))
    excess = mean_gap - cfg.dead_time
    if excess <= CAPACITY_RTOL * mean_gap:
        raise EstimatorError("mean gap at or below dead time")
    return FluxEstimate(1.0 / (cfg.quantum_efficiency * excess), "spad_timestamps")


def spad_capacity(cfg: SpadConfig, exposure: ExposureLike) -> int:
    """Largest count with a finite estimate: the largest n with nτd < T."""
    T = exposure_seconds(exposure)
    n = math.floor(T / cfg.dead_time)
    while n > 0 and n * cfg.dead_time >= T * (1.0 - CAPACITY_RTOL):
        n -= 1
    return n


def estimate_from_counts(n: int, cfg: SpadConfig, exposure: ExposureLike) -> FluxEstimate:
    """PF-SPAD count estimator Φ̂ = n / (q(T − nτd))."""
    T = exposure_seconds(exposure)
    if n < 0 or int(n) != n:
        raise EstimatorError(f"count must be a non-negative integer, got {n!r}")
    if n > spad_capacity(cfg, T):
        raise EstimatorError("count exceeds exposure capacity")
    return FluxEstimate(n / (cfg.quantum_efficiency * (T - n * cfg.dead_time)), "spad_counts")


def estimate_qis(n: int, cfg: QisConfig, exposure: ExposureLike) -> FluxEstimate:
    """QIS maximum-likelihood estimate (1/(qτb))·ln(T/(T − nτb))."""
    T = exposure_seconds(exposure)
    n_bins = qis_bin_count(cfg, T)
    if n < 0 or int(n) != n:
        raise EstimatorError(f"count must be a non-negative integer, got {n!r}")
    if n == n_bins:
        raise EstimatorError("all bins full, estimator diverges")
    if n > n_bins:
        raise EstimatorError(f"count {n} exceeds the number of bins {n_bins}")
    phi = -math.log1p(-n / n_bins) / (cfg.quantum_efficiency * cfg.bin_width)
    return FluxEstimate(phi, "qis")


def estimate_conventional(n: int, cfg: ConventionalConfig, exposure: ExposureLike) -> FluxEstimate:
    """Linear estimate n/(qT); a full well returns ``phi_hat=inf, saturated=True``."""
    T = exposure_seconds(exposure)
    if n < 0 or int(n) != n:
        raise EstimatorError(f"count must be a non-negative integer, got {n!r}")
    if n > cfg.full_well:
        raise EstimatorError(f"count {n} exceeds full well {cfg.full_well}")
    if n == cfg.full_well:
        return FluxEstimate(math.inf, "conventional", saturated=True)
    return FluxEstimate(n / (cfg.quantum_efficiency * T), "conventional")


# --- array versions ---------------------------------------------------------------

def spad_flux_array(counts, cfg: SpadConfig, exposure: ExposureLike):
    """Vectorized count estimator.  Counts beyond capacity are flagged and
    clipped to the largest finite estimate."""
    T = exposure_seconds(exposure)
    n = np.asarray(counts, dtype=float)
    cap = spad_capacity(cfg, T)
    flagged = n > cap
    n = np.minimum(n, cap)
    return n / (cfg.quantum_efficiency * (T - n * cfg.dead_time)), flagged


def qis_flux_array(counts, cfg: QisConfig, exposure: ExposureLike):
    """Vectorized QIS estimator; full jot-cubes are flagged and mapped to N−1."""
    T = exposure_seconds(exposure)
    n_bins = qis_bin_count(cfg, T)
    n = np.asarray(counts, dtype=float)
    flagged = n >= n_bins
    n = np.minimum(n, n_bins - 1)
    return -np.log1p(-n / n_bins) / (cfg.quantum_efficiency * cfg.bin_width), flagged


def conventional_flux_array(counts, cfg: ConventionalConfig, exposure: ExposureLike):
    """Vectorized linear estimator; full wells are flagged and mapped to N_fwc/(qT)."""
    T = exposure_seconds(exposure)
    n = np.asarray(counts, dtype=float)
    flagged = n >= cfg.full_well
    n = np.minimum(n, cfg.full_well)
    return n / (cfg.quantum_efficiency * T), flagged


def flux_array(counts, cfg, exposure: ExposureLike):
    """Dispatch to the array estimator matching ``cfg``'s sensor type."""
    if isinstance(cfg, SpadConfig):
        return spad_flux_array(counts, cfg, exposure)
    if isinstance(cfg, ConventionalConfig):
        return conventional_flux_array(counts, cfg, exposure)
    if isinstance(cfg, QisConfig):
        return qis_flux_array(counts, cfg, exposure)
    raise TypeError(f"unsupported sensor config {type(cfg).__name__}")
