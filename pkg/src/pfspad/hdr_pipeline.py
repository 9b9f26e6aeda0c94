"""Simulated single-exposure HDR imaging: PFM in, counts, flux, tone-mapped PNG out."""

from __future__ import annotations

import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .config import (ConventionalConfig, QisConfig, SpadConfig, exposure_seconds,
                     qis_bin_count)
from .flux_estimators import spad_capacity
from .photon_mc import SeedSpec
from .transformers import FluxReconstructor, GlobalToneMapper, SensorCapture

log = logging.getLogger(__name__)

SUMMARY_HEADER = "channel,min_flux,max_flux,mean_flux,saturated_pixels"


class PfmError(ValueError):
    """Malformed or unsupported PFM data."""


@dataclass
class FluxImage:
    """Per-pixel photon flux, shape ``(height, width, channels)``, row 0 at the top.

    ``saturated`` optionally flags pixels whose flux could not be measured
    (same shape as ``data``).
    """

    data: np.ndarray
    saturated: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3) or 0 in data.shape:
            raise ValueError(f"flux image must be HxWx1 or HxWx3, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("flux values must be finite and >= 0")
        self.data = data
        if self.saturated is not None:
            self.saturated = np.asarray(self.saturated, dtype=bool).reshape(data.shape)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """View as ``(height*width, channels)``, row-major."""
        return self.data.reshape(-1, self.channels)


@dataclass
class CountImage:
    counts: np.ndarray
    config: object
    exposure: float
    seed: int = 0
    sensor: str = field(init=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.sensor = sensor_name(self.config)
        bound = capacity_bound(self.config, self.exposure)
        if np.any(self.counts < 0) or (bound is not None and np.any(self.counts > bound)):
            raise ValueError("counts outside the sensor's capacity")


def sensor_name(cfg) -> str:
    if isinstance(cfg, SpadConfig):
        return "spad"
    if isinstance(cfg, ConventionalConfig):
        return "conventional"
    if isinstance(cfg, QisConfig):
        return "qis"
    raise TypeError(f"unsupported sensor config {type(cfg).__name__}")


def capacity_bound(cfg, exposure) -> int | None:
    """Largest count a sensor can report in one exposure (None: unbounded)."""
    T = exposure_seconds(exposure)
    if isinstance(cfg, ConventionalConfig):
        return cfg.full_well
    if isinstance(cfg, QisConfig):
        return qis_bin_count(cfg, T)
    if cfg.jitter_sigma > 0:
        # truncated-normal dead times can be arbitrarily short
        return None
    # a free-running start can place the first detection right at t=0
    return spad_capacity(cfg, T) + 2


# --- PFM codec -------------------------------------------------------------------

_TOKEN = re.compile(rb"\S+")


def _read_header(buf: bytes):
    """Return (tokens, payload offset); the header is three whitespace-separated
    fields ending in a single whitespace byte."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _TOKEN.search(buf, pos)
        if m is None:
            raise PfmError("truncated header")
        tokens.append(m.group())
        pos = m.end()
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PfmError("missing whitespace after scale field")
    return tokens, pos + 1


def decode_pfm(buf: bytes) -> np.ndarray:
    """Decode PFM bytes into an ``(H, W, C)`` float32 array, top row first."""
    tokens, offset = _read_header(buf)
    magic, w_tok, h_tok, scale_tok = tokens
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise PfmError(f"bad magic {magic!r}; expected 'PF' or 'Pf'")
    try:
        width, height = int(w_tok), int(h_tok)
        scale = float(scale_tok)
    except ValueError:
        raise PfmError("malformed dimensions or scale line") from None
    if width <= 0 or height <= 0:
        raise PfmError(f"bad dimensions {width}x{height}")
    if scale == 0 or not math.isfinite(scale):
        raise PfmError(f"bad scale {scale!r}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    n = width * height * channels
    payload = buf[offset:offset + 4 * n]
    if len(payload) < 4 * n:
        raise PfmError(f"truncated payload: expected {4 * n} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if np.any(np.isnan(data)):
        raise PfmError("NaN in payload")
    # rows are stored bottom to top
    return data.reshape(height, width, channels)[::-1].copy()


def encode_pfm(data: np.ndarray) -> bytes:
    """Encode an ``(H, W, C)`` array (C = 1 or 3) as little-endian PFM."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    if c not in (1, 3):
        raise PfmError(f"PFM needs 1 or 3 channels, got {c}")
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode_pfm(path.read_bytes())
    except PfmError as exc:
        raise PfmError(f"{path}: {exc}") from None


def write_pfm(path, data) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_pfm(data))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_flux_image(path, format: str = "pfm") -> FluxImage:
    """Read a radiance map as ground-truth flux; negative values are clamped to 0."""
    if format != "pfm":
        raise ValueError(f"unsupported format {format!r}")
    data = read_pfm(path).astype(np.float64)
    if np.any(np.isinf(data)):
        raise PfmError(f"{path}: infinite value in payload")
    negative = int(np.count_nonzero(data < 0))
    if negative:
        warnings.warn(f"{path}: clamped {negative} negative values to 0", stacklevel=2)
        data = np.maximum(data, 0.0)
    return FluxImage(data)


# --- scene preparation --------------------------------------------------------------

def rescale_dynamic_range(img: FluxImage, target_ratio: float, peak_flux: float) -> FluxImage:
    """Map positive values through log y = a·log x + b so that max = ``peak_flux``
    and max/min = ``target_ratio``.  Zeros stay zero; ordering is preserved."""
    if not target_ratio > 1:
        raise ValueError("target_ratio must be > 1")
    if not peak_flux > 0:
        raise ValueError("peak_flux must be > 0")
    data = img.data
    pos = data > 0
    values = data[pos]
    if values.size == 0 or values.min() == values.max():
        raise ValueError("image needs at least two distinct positive values")
    log_min, log_max = np.log(values.min()), np.log(values.max())
    slope = math.log(target_ratio) / (log_max - log_min)
    out = np.zeros_like(data)
    out[pos] = np.exp(math.log(peak_flux) + slope * (np.log(values) - log_max))
    return FluxImage(out)


def two_patch_scene(height: int = 64, width: int = 64, dark: float = 1e4,
                    bright: float = 1e9, channels: int = 1) -> FluxImage:
    """Left half at ``dark`` flux, right half at ``bright`` flux."""
    data = np.full((height, width, channels), float(dark))
    data[:, width // 2:, :] = bright
    return FluxImage(data)


# --- capture and reconstruction --------------------------------------------------------

def simulate_capture(img: FluxImage, config, exposure, seed=0, fast: bool = False,
                     threads: int | None = None, start: str = "stationary") -> CountImage:
    """Simulate every pixel and channel independently.

    Pixel ``p`` (row-major) and channel ``c`` use stream ``p * channels + c``
    of the master seed.
    """
    master = seed.master_seed if isinstance(seed, SeedSpec) else int(seed)
    T = exposure_seconds(exposure)
    capture = SensorCapture(config, exposure=T, seed=master, fast=fast, start=start,
                            threads=threads)
    counts = capture.fit_transform(img.pixels())
    return CountImage(counts.reshape(img.data.shape), config, T, master)


def reconstruct_flux(counts: CountImage) -> FluxImage:
    """Estimate flux per pixel; unmeasurable pixels are clipped and flagged."""
    recon = FluxReconstructor(counts.config, exposure=counts.exposure)
    flat = counts.counts.reshape(-1, counts.counts.shape[2])
    flux, flagged = recon.fit(flat).transform_with_mask(flat)
    shape = counts.counts.shape
    return FluxImage(flux.reshape(shape), saturated=flagged.reshape(shape))


def tone_map(img: FluxImage, key: float = 1.0) -> np.ndarray:
    """8-bit ``(H, W, C)`` rendering with `GlobalToneMapper`."""
    out = GlobalToneMapper(key=key).fit_transform(img.pixels())
    return out.reshape(img.data.shape)


def flux_summary(img: FluxImage) -> list[dict]:
    sat = img.saturated if img.saturated is not None else np.zeros(img.data.shape, bool)
    names = ["gray"] if img.channels == 1 else ["red", "green", "blue"]
    rows = []
    for c, name in enumerate(names):
        values = img.data[:, :, c]
        rows.append(dict(channel=name, min_flux=float(values.min()),
                         max_flux=float(values.max()), mean_flux=float(values.mean()),
                         saturated_pixels=int(np.count_nonzero(sat[:, :, c]))))
    return rows


def write_png(path, toned: np.ndarray) -> None:
    toned = np.asarray(toned, dtype=np.uint8)
    image = Image.fromarray(toned[:, :, 0] if toned.shape[2] == 1 else toned,
                            mode="L" if toned.shape[2] == 1 else "RGB")
    try:
        # fixed PNG options keep the bytes reproducible
        image.save(path, format="PNG", optimize=False, compress_level=6)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_outputs(counts: CountImage | None, flux: FluxImage, toned: np.ndarray,
                  prefix) -> dict:
    """Write ``<prefix>.png``, ``<prefix>.pfm`` and ``<prefix>_summary.csv``.

    Returns the paths written.
    """
    prefix = Path(prefix)
    paths = {
        "png": prefix.with_name(prefix.name + ".png"),
        "pfm": prefix.with_name(prefix.name + ".pfm"),
        "summary": prefix.with_name(prefix.name + "_summary.csv"),
    }
    try:
        prefix.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write {prefix.parent}: {exc}") from exc
    write_png(paths["png"], toned)
    write_pfm(paths["pfm"], flux.data.astype(np.float32))
    try:
        with open(paths["summary"], "w", newline="") as fh:
            fh.write(SUMMARY_HEADER + "\n")
            for row in flux_summary(flux):
                fh.write(f"{row['channel']},{row['min_flux']!r},{row['max_flux']!r},"
                         f"{row['mean_flux']!r},{row['saturated_pixels']}\n")
    except OSError as exc:
        raise OSError(f"cannot write {paths['summary']}: {exc}") from exc
    if counts is not None:
        log.info("wrote %s capture (%dx%d) to %s.*", counts.sensor, flux.width,
                 flux.height, prefix)
    return paths


def render(img: FluxImage, config, exposure, seed=0, fast: bool = False, key: float = 1.0,
           threads: int | None = None, prefix=None):
    """Capture, reconstruct and tone-map; optionally write the three outputs."""
    counts = simulate_capture(img, config, exposure, seed=seed, fast=fast, threads=threads)
    flux = reconstruct_flux(counts)
    toned = tone_map(flux, key=key)
    paths = write_outputs(counts, flux, toned, prefix) if prefix is not None else None
    return counts, flux, toned, paths
