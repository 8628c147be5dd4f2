"""Reference predictors: the normalized trace itself, and smooth-then-deconvolve.

Both operate on preprocessed (detrended, percentile-normalized) traces at the
common bin rate and emit one predicted rate per bin.  The deconvolution
smooths with a centered moving average, then inverts the first-order
exponential transient exactly: if the calcium response to a unit spike is
``exp(-dt/tau)`` per bin, then ``s_t = y_t - exp(-dt/tau) * y_{t-1}``
recovers the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .signal_io import BinnedRecording

PRED_FLOOR = 1e-8


@dataclass
class DeconvConfig:
    """Smoothing cutoff (None disables smoothing), transient time constant, clipping."""

    smooth_cutoff_hz: float | None = 5.0
    tau_s: float = 0.5
    nonneg_clip: bool = True

    def __post_init__(self):
        if self.smooth_cutoff_hz is not None and self.smooth_cutoff_hz <= 0:
            raise ValueError("smooth_cutoff_hz must be positive or None")
        if self.tau_s <= 0:
            raise ValueError("tau_s must be positive")


def raw_predict(binned: BinnedRecording) -> np.ndarray:
    """The preprocessed trace itself, shifted to be positive.

    The shift is affine, so correlation and AUC match the unshifted trace
    exactly; only the positivity needed by likelihood scoring is added.
    """
    fluor = binned.fluorescence
    return fluor - fluor.min() + PRED_FLOOR


def moving_average(values, width: int) -> np.ndarray:
    """Centered moving average; edge windows shrink instead of padding."""
    values = np.asarray(values, dtype=np.float64)
    if width <= 1:
        return values.copy()
    kernel = np.ones(width)
    sums = np.convolve(values, kernel, mode="same")
    norms = np.convolve(np.ones(values.size), kernel, mode="same")
    return sums / norms


def convolve_exponential(spikes, tau_s: float, rate_hz: float) -> np.ndarray:
    """Forward transient model: unit-height exponential decay per spike."""
    decay = np.exp(-1.0 / (tau_s * rate_hz))
    return lfilter([1.0], [1.0, -decay], np.asarray(spikes, dtype=np.float64))


def deconvolve(binned: BinnedRecording, cfg: DeconvConfig | None = None) -> np.ndarray:
    """Smooth the trace, invert the exponential transient, optionally clip at 0."""
    cfg = cfg or DeconvConfig()
    y = binned.fluorescence
    if cfg.smooth_cutoff_hz is not None:
        width = int(round(binned.bin_rate_hz / cfg.smooth_cutoff_hz))
        y = moving_average(y, width)
    decay = np.exp(-1.0 / (cfg.tau_s * binned.bin_rate_hz))
    out = y - decay * np.concatenate(([0.0], y[:-1]))
    if cfg.nonneg_clip:
        out = np.maximum(out, 0.0)
    return out
