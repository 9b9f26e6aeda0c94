"""SNR curves over a log-spaced flux grid and the dynamic-range metric."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ConventionalConfig, ExposureLike, QisConfig, SpadConfig
from .reference_analytic import conventional_rmse_snr, qis_rmse_snr
from .spad_analytic import rmse_approx, rmse_exact, snr_from_rmse

MODEL_TAGS = ("spad_approx", "spad_exact", "spad_jitter", "conventional", "qis", "monte_carlo")
CURVE_HEADER = "flux_photons_per_s,rmse,snr_db,model"


@dataclass(frozen=True)
class SnrCurve:
    flux_grid: np.ndarray
    snr_db: np.ndarray
    rmse: np.ndarray
    model_tag: str

    def __post_init__(self):
        for name in ("flux_grid", "snr_db", "rmse"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.flux_grid.shape == self.snr_db.shape == self.rmse.shape):
            raise ValueError("flux_grid, snr_db and rmse must have equal length")
        if self.flux_grid.ndim != 1 or self.flux_grid.size < 2:
            raise ValueError("a curve needs at least two points")
        if np.any(np.diff(self.flux_grid) <= 0) or self.flux_grid[0] <= 0:
            raise ValueError("flux_grid must be positive and strictly increasing")
        if self.model_tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {self.model_tag!r}")
        if np.any(np.isnan(self.snr_db)):
            raise ValueError("snr_db must not contain NaN (use -inf for no signal)")

    def max_snr(self) -> float:
        return float(np.max(self.snr_db))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(CURVE_HEADER + "\n")
            write_curve_rows(fh, self)

    @classmethod
    def from_csv(cls, path, model_tag: str | None = None) -> "SnrCurve":
        """Read a curve file; if it holds several models pick one with ``model_tag``."""
        curves = read_curves_csv(path)
        if model_tag is not None:
            curves = [c for c in curves if c.model_tag == model_tag]
        if len(curves) != 1:
            tags = [c.model_tag for c in read_curves_csv(path)]
            raise ValueError(f"{path}: expected exactly one curve, found models {tags}")
        return curves[0]


def write_curve_rows(fh, curve: SnrCurve, prefix: str = "") -> None:
    for f, r, s in zip(curve.flux_grid, curve.rmse, curve.snr_db):
        fh.write(f"{prefix}{float(f)!r},{float(r)!r},{float(s)!r},{curve.model_tag}\n")


def read_curves_csv(path) -> list[SnrCurve]:
    rows: dict[str, list] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            f, r, s, tag = line.strip().split(",")
            rows.setdefault(tag, []).append((float(f), float(r), float(s)))
    out = []
    for tag, vals in rows.items():
        arr = np.array(vals)
        out.append(SnrCurve(arr[:, 0], arr[:, 2], arr[:, 1], tag))
    return out


def log_grid(flux_min: float, flux_max: float, points: int) -> np.ndarray:
    if not (flux_min > 0 and flux_max > flux_min):
        raise ValueError("need 0 < flux_min < flux_max")
    if points < 2:
        raise ValueError("points must be >= 2")
    return np.logspace(math.log10(flux_min), math.log10(flux_max), int(points))


def snr_curve(model_tag: str, cfg, exposure: ExposureLike, flux_min: float,
              flux_max: float, points: int, **kwargs) -> SnrCurve:
    """Evaluate one analytic model on a log-spaced flux grid.

    ``cfg`` must match the model: `SpadConfig` for the ``spad_*`` tags,
    `ConventionalConfig` or `QisConfig` for the baselines.  Extra keyword
    arguments go to `rmse_exact` for ``spad_exact``.
    """
    if model_tag not in MODEL_TAGS or model_tag == "monte_carlo":
        raise ValueError(f"unknown analytic model tag {model_tag!r}")
    grid = log_grid(flux_min, flux_max, points)
    expected = {"conventional": ConventionalConfig, "qis": QisConfig}.get(model_tag, SpadConfig)
    if not isinstance(cfg, expected):
        raise TypeError(f"model {model_tag!r} needs a {expected.__name__}")
    if model_tag in ("spad_approx", "spad_jitter"):
        rmse = np.asarray(rmse_approx(grid, cfg, exposure,
                                      jitter_corrected=model_tag == "spad_jitter").rmse)
        snr = snr_from_rmse(grid, rmse)
    elif model_tag == "spad_exact":
        rmse = np.array([rmse_exact(phi, cfg, exposure, **kwargs) for phi in grid])
        snr = snr_from_rmse(grid, rmse)
    elif model_tag == "conventional":
        rmse, snr = conventional_rmse_snr(grid, cfg, exposure)
    else:
        rmse, snr = qis_rmse_snr(grid, cfg, exposure)
    return SnrCurve(grid, snr, rmse, model_tag)


def curve_from_trials(stats) -> SnrCurve:
    """Empirical SNR curve from `photon_mc.run_trials` output."""
    flux = np.array([s.flux for s in stats])
    rmse = np.array([s.rmse_flux_hat for s in stats])
    snr = np.array([s.snr_db for s in stats])
    return SnrCurve(flux, snr, rmse, "monte_carlo")


def _crossing(phi_a, snr_a, phi_b, snr_b, threshold):
    """Flux where the log-linear interpolant between two grid points hits threshold."""
    if not np.isfinite(snr_a) or not np.isfinite(snr_b):
        # hard jump (e.g. full well): stay on the admissible point
        return phi_b if snr_b >= threshold else phi_a
    w = (threshold - snr_a) / (snr_b - snr_a)
    return math.exp(math.log(phi_a) + w * (math.log(phi_b) - math.log(phi_a)))


def dynamic_range(curve: SnrCurve, threshold_db: float = 30.0):
    """Ratio of the highest to the lowest flux with SNR >= ``threshold_db``.

    The end points are refined between grid samples by linear interpolation
    of dB against log flux.  Returns ``None`` if no sample reaches the
    threshold.
    """
    ok = np.flatnonzero(curve.snr_db >= threshold_db)
    if ok.size == 0:
        return None
    phi, snr = curve.flux_grid, curve.snr_db
    i_lo, i_hi = ok[0], ok[-1]
    lo = phi[i_lo] if i_lo == 0 else _crossing(phi[i_lo - 1], snr[i_lo - 1], phi[i_lo], snr[i_lo],
                                               threshold_db)
    hi = phi[i_hi] if i_hi == phi.size - 1 else _crossing(phi[i_hi], snr[i_hi], phi[i_hi + 1],
                                                          snr[i_hi + 1], threshold_db)
    return float(hi / lo)
