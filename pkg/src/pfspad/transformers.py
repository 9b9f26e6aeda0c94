"""scikit-learn compatible wrappers for pixel arrays.

Arrays are ``(n_pixels, n_channels)``: an H×W×C image reshaped to
``(H*W, C)``.  The three transformers chain in a `sklearn.pipeline.Pipeline`::

    Pipeline([("capture", SensorCapture(cfg, exposure=5e-3, seed=0)),
              ("reconstruct", FluxReconstructor(cfg, exposure=5e-3)),
              ("tonemap", GlobalToneMapper(key=1.0))])
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import (ConventionalConfig, QisConfig, SpadConfig, exposure_seconds,
                     qis_bin_count, validate_spad_config)
from .flux_estimators import flux_array
from .photon_mc import simulate_counts

# Rec. 709 luma weights
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


def _check_sensor(config, exposure):
    if isinstance(config, SpadConfig):
        validate_spad_config(config, exposure)
    elif isinstance(config, QisConfig):
        qis_bin_count(config, exposure)
    elif not isinstance(config, ConventionalConfig):
        raise TypeError(f"config must be a sensor config, got {type(config).__name__}")


def _check_pixels(X, dtype=np.float64):
    X = check_array(X, dtype=dtype)
    if np.any(X < 0):
        raise ValueError("pixel values must be >= 0")
    return X


class SensorCapture(TransformerMixin, BaseEstimator):
    """Simulate one exposure of every pixel: flux (photons/s) -> integer counts.

    Element ``(i, c)`` draws from random stream ``i * n_channels + c`` of
    ``seed``, so the output does not depend on ``threads``.

    Parameters
    ----------
    config : SpadConfig, ConventionalConfig or QisConfig
    exposure : float
        Exposure time [s].
    seed : int
        Master seed.
    fast : bool
        For SPADs without afterpulsing or jitter, sample counts from the
        exact count pmf instead of running the event simulation.
    start : str
        Exposure-start convention of the SPAD simulator.
    threads : int or None
        Worker threads; None reads ``$PFSPAD_THREADS``.
    """

    def __init__(self, config=None, exposure=5e-3, seed=0, fast=False,
                 start="stationary", threads=None):
        self.config = config
        self.exposure = exposure
        self.seed = seed
        self.fast = fast
        self.start = start
        self.threads = threads

    def fit(self, X, y=None):
        _check_sensor(self.config, self.exposure)
        X = _check_pixels(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_pixels(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} channels, got {X.shape[1]}")
        return simulate_counts(self.config, X, exposure_seconds(self.exposure),
                               master_seed=self.seed, threads=self.threads,
                               start=self.start, fast=self.fast)


class FluxReconstructor(TransformerMixin, BaseEstimator):
    """Invert counts to flux with the estimator matching ``config``.

    Counts without a finite estimate (full well, full jot-cube, SPAD count
    at capacity) are clipped to the sensor's largest reportable flux; use
    `transform_with_mask` to get the flags.
    """

    def __init__(self, config=None, exposure=5e-3):
        self.config = config
        self.exposure = exposure

    def fit(self, X, y=None):
        _check_sensor(self.config, self.exposure)
        X = _check_pixels(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform_with_mask(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_pixels(X)
        return flux_array(X, self.config, exposure_seconds(self.exposure))

    def transform(self, X):
        return self.transform_with_mask(X)[0]


class GlobalToneMapper(TransformerMixin, BaseEstimator):
    """Global sigmoid tone curve to 8-bit.

    ``fit`` learns the geometric mean luminance L_avg of the positive
    pixels.  ``transform`` computes L' = L / (key · L_avg) and the display
    luminance L'/(1 + L'), rescales each channel by display/L, and
    quantizes to 0..255.  An all-zero image maps to all zeros.
    """

    def __init__(self, key=1.0):
        self.key = key

    @staticmethod
    def luminance(X):
        X = np.asarray(X, dtype=float)
        if X.shape[1] == 1:
            return X[:, 0]
        if X.shape[1] == 3:
            return X @ LUMA_WEIGHTS
        raise ValueError("tone mapping supports 1 or 3 channels")

    def fit(self, X, y=None):
        if not self.key > 0:
            raise ValueError(f"key must be > 0, got {self.key!r}")
        X = _check_pixels(X)
        self.n_features_in_ = X.shape[1]
        lum = self.luminance(X)
        pos = lum[lum > 0]
        self.log_average_ = float(np.exp(np.mean(np.log(pos)))) if pos.size else 0.0
        return self

    def transform(self, X):
        check_is_fitted(self, "log_average_")
        X = _check_pixels(X)
        lum = self.luminance(X)
        out = np.zeros(X.shape, dtype=np.uint8)
        if self.log_average_ == 0.0:
            return out
        pos = lum > 0
        scaled = lum[pos] / (self.key * self.log_average_)
        display = scaled / (1.0 + scaled)
        ratio = (display / lum[pos])[:, None]
        out[pos] = np.rint(255.0 * np.clip(X[pos] * ratio, 0.0, 1.0)).astype(np.uint8)
        return out
