"""Sensor parameter types and config-file parsing.

Units are fixed across the package: seconds, photons/second, electrons,
decibels.  All config types are frozen dataclasses that check their own
field ranges on construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union


class ConfigError(ValueError):
    """Raised when a sensor parameter violates its allowed range."""


def _check_finite(obj) -> None:
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, (int, float)) and not math.isfinite(value):
            raise ConfigError(f"{f.name} must be finite, got {value!r}")


def _check_qe(q: float) -> None:
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"quantum_efficiency out of range (0, 1]: {q!r}")


@dataclass(frozen=True)
class Exposure:
    """Exposure time in seconds."""

    duration: float

    def __post_init__(self):
        _check_finite(self)
        if self.duration <= 0:
            raise ConfigError(f"exposure duration must be > 0 s, got {self.duration!r}")


ExposureLike = Union[Exposure, float]


def exposure_seconds(exposure: ExposureLike) -> float:
    """Return the exposure time in seconds from an `Exposure` or a bare float."""
    if isinstance(exposure, Exposure):
        return exposure.duration
    return Exposure(float(exposure)).duration


@dataclass(frozen=True)
class SpadConfig:
    """Passive free-running SPAD pixel.

    Parameters
    ----------
    quantum_efficiency : float
        Photon detection probability, in (0, 1].
    dead_time : float
        Mean dead time after each detection [s], > 0.
    dark_rate : float
        Dark count rate [counts/s].
    afterpulse_prob : float
        Probability of an afterpulse at the end of each dead time, in [0, 1).
    jitter_sigma : float
        Standard deviation of the dead time duration [s]; must be below
        ``dead_time``.
    """

    quantum_efficiency: float
    dead_time: float
    dark_rate: float = 0.0
    afterpulse_prob: float = 0.0
    jitter_sigma: float = 0.0

    def __post_init__(self):
        _check_finite(self)
        _check_qe(self.quantum_efficiency)
        if self.dead_time <= 0:
            raise ConfigError(f"dead_time must be > 0 s, got {self.dead_time!r}")
        if self.dark_rate < 0:
            raise ConfigError(f"dark_rate must be >= 0, got {self.dark_rate!r}")
        if not 0.0 <= self.afterpulse_prob < 1.0:
            raise ConfigError(f"afterpulse_prob out of range [0, 1): {self.afterpulse_prob!r}")
        if self.jitter_sigma < 0:
            raise ConfigError(f"jitter_sigma must be >= 0, got {self.jitter_sigma!r}")
        if self.jitter_sigma >= self.dead_time:
            raise ConfigError("jitter_sigma must be smaller than dead_time")


@dataclass(frozen=True)
class ConventionalConfig:
    """Full-well-limited CCD/CMOS pixel."""

    quantum_efficiency: float
    full_well: int
    read_noise: float = 0.0

    def __post_init__(self):
        _check_finite(self)
        _check_qe(self.quantum_efficiency)
        if int(self.full_well) != self.full_well or self.full_well < 1:
            raise ConfigError(f"full_well must be an integer >= 1, got {self.full_well!r}")
        if self.read_noise < 0:
            raise ConfigError(f"read_noise must be >= 0, got {self.read_noise!r}")


@dataclass(frozen=True)
class QisConfig:
    """Uniform-binning binary (jot) sensor; ``bin_width`` is one time bin [s]."""

    quantum_efficiency: float
    bin_width: float
    read_noise: float = 0.0

    def __post_init__(self):
        _check_finite(self)
        _check_qe(self.quantum_efficiency)
        if self.bin_width <= 0:
            raise ConfigError(f"bin_width must be > 0 s, got {self.bin_width!r}")
        if self.read_noise < 0:
            raise ConfigError(f"read_noise must be >= 0, got {self.read_noise!r}")


SensorConfig = Union[SpadConfig, ConventionalConfig, QisConfig]


def validate_spad_config(cfg: SpadConfig, exposure: ExposureLike):
    """Check a SPAD config against an exposure and return the pair unchanged.

    Raises `ConfigError` naming the first violated constraint.
    """
    if not isinstance(cfg, SpadConfig):
        raise ConfigError(f"expected SpadConfig, got {type(cfg).__name__}")
    # re-run field checks: the dataclass may have been built with object.__setattr__
    cfg.__post_init__()
    T = exposure_seconds(exposure)
    if T <= cfg.dead_time:
        raise ConfigError(
            f"exposure shorter than dead time ({T!r} s <= {cfg.dead_time!r} s)")
    return cfg, exposure


def qis_bin_count(cfg: QisConfig, exposure: ExposureLike) -> int:
    """Number of time bins N = T / tau_b; T must be an integer multiple of tau_b."""
    T = exposure_seconds(exposure)
    ratio = T / cfg.bin_width
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(ratio, 1.0):
        raise ConfigError(
            f"exposure {T!r} s is not an integer multiple of bin_width {cfg.bin_width!r} s")
    return int(n)


# --- key=value config files ----------------------------------------------------

CONFIG_KEYS = {
    "q": float,
    "tau_d_s": float,
    "dark_rate_hz": float,
    "p_ap": float,
    "jitter_sigma_s": float,
    "exposure_s": float,
    "fwc": int,
    "read_noise_e": float,
    "qis_tau_b_s": float,
}


def parse_config_text(text: str, source: str = "<string>") -> dict:
    """Parse ``key=value`` lines; '#' starts a comment.  Unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if CONFIG_KEYS[key] is int:
                parsed = float(value)
                if parsed != int(parsed):
                    raise ValueError
                values[key] = int(parsed)
            else:
                values[key] = float(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from None
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))


def _require(values: dict, key: str, sensor: str):
    if key not in values:
        raise ConfigError(f"missing key {key!r} for sensor {sensor!r}")
    return values[key]


def spad_config_from_dict(values: dict) -> SpadConfig:
    return SpadConfig(
        quantum_efficiency=_require(values, "q", "spad"),
        dead_time=_require(values, "tau_d_s", "spad"),
        dark_rate=values.get("dark_rate_hz", 0.0),
        afterpulse_prob=values.get("p_ap", 0.0),
        jitter_sigma=values.get("jitter_sigma_s", 0.0),
    )


def conventional_config_from_dict(values: dict) -> ConventionalConfig:
    return ConventionalConfig(
        quantum_efficiency=_require(values, "q", "conventional"),
        full_well=_require(values, "fwc", "conventional"),
        read_noise=values.get("read_noise_e", 0.0),
    )


def qis_config_from_dict(values: dict) -> QisConfig:
    return QisConfig(
        quantum_efficiency=_require(values, "q", "qis"),
        bin_width=_require(values, "qis_tau_b_s", "qis"),
        read_noise=values.get("read_noise_e", 0.0),
    )


def config_to_text(cfg: SensorConfig, exposure: float | None = None) -> str:
    """Serialize a config back to the key=value format."""
    if isinstance(cfg, SpadConfig):
        pairs = [("q", cfg.quantum_efficiency), ("tau_d_s", cfg.dead_time),
                 ("dark_rate_hz", cfg.dark_rate), ("p_ap", cfg.afterpulse_prob),
                 ("jitter_sigma_s", cfg.jitter_sigma)]
    elif isinstance(cfg, ConventionalConfig):
        pairs = [("q", cfg.quantum_efficiency), ("fwc", cfg.full_well),
                 ("read_noise_e", cfg.read_noise)]
    elif isinstance(cfg, QisConfig):
        pairs = [("q", cfg.quantum_efficiency), ("qis_tau_b_s", cfg.bin_width),
                 ("read_noise_e", cfg.read_noise)]
    else:
        raise TypeError(f"unsupported config type {type(cfg).__name__}")
    if exposure is not None:
        pairs.append(("exposure_s", exposure))
    return "".join(f"{k}={v!r}\n" for k, v in pairs)


# Parameters of the single-pixel prototype and the reference CMOS pixel used
# throughout the examples and acceptance tests.
PROTOTYPE_SPAD = SpadConfig(quantum_efficiency=0.4, dead_time=149.7e-9,
                        dark_rate=100.0, afterpulse_prob=0.01)
REFERENCE_CMOS = ConventionalConfig(quantum_efficiency=0.9, full_well=33400,
                                        read_noise=5.0)
DEFAULT_EXPOSURE = Exposure(5e-3)
