"""Trace preprocessing: robust linear detrending and percentile normalization.

The trend model is a straight line over the bin index with residuals drawn
from a zero-mean Gaussian scale mixture, fit by expectation-maximization.
The mixture's wide components absorb outliers, so the fitted slope is robust
to large excursions that would drag an ordinary least-squares line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError
from .signal_io import BinnedRecording, Recording, resample_to_common

CONVERGENCE_TOL = 1e-8
MAX_EM_ITERS = 500


@dataclass
class DetrendFit:
    """Maximum-likelihood line fit with Gaussian-scale-mixture residuals.

    ``slope_a`` is per bin (the regressor is the sample index, not seconds).
    ``loglik`` is the final average log-likelihood per sample.
    """

    slope_a: float
    intercept_b: float
    mixture_weights: np.ndarray
    mixture_sigmas: np.ndarray
    loglik: float
    sigma_floor_hit: bool = False
    loglik_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.mixture_weights = np.asarray(self.mixture_weights, dtype=np.float64)
        self.mixture_sigmas = np.asarray(self.mixture_sigmas, dtype=np.float64)
        if abs(self.mixture_weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.mixture_sigmas <= 0):
            raise ValueError("mixture sigmas must be strictly positive")


def _mixture_loglik(resid, weights, sigmas):
    # (n, K) log densities, reduced to the per-sample average log-likelihood
    log_dens = (
        np.log(weights)
        - 0.5 * np.log(2.0 * np.pi * sigmas**2)
        - resid[:, None] ** 2 / (2.0 * sigmas**2)
    )
    return log_dens, float(np.mean(logsumexp(log_dens, axis=1)))


def fit_gsm_trend(fluor, n_components: int = 3, seed: int = 0) -> DetrendFit:
    """Fit ``F_t = a*t + b + e_t`` with a Gaussian-scale-mixture residual by EM.

    Initialization: ordinary least squares for the line, component sigmas at
    geometrically spaced multiples (0.5x..2x) of the residual std, uniform
    weights.  Each EM sweep does a responsibility-weighted least squares for
    the line followed by closed-form weight/sigma updates, which keeps the
    observed log-likelihood nondecreasing.  Stops when the per-sample
    log-likelihood improves by less than 1e-8 or after 500 sweeps.

    The fit is deterministic; ``seed`` is accepted for interface stability
    but no random draws are made.
    """
    del seed
    fluor = np.asarray(fluor, dtype=np.float64)
    if fluor.ndim != 1 or fluor.size < 10:
        raise ValueError("need a 1-D trace with at least 10 samples")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")

    n = fluor.size
    t = np.arange(n, dtype=np.float64)
    sigma_floor = 1e-6 * (float(fluor.std()) + 1e-12)

    slope, intercept = np.polyfit(t, fluor, 1)
    resid = fluor - slope * t - intercept
    resid_std = max(float(resid.std()), sigma_floor)
    if n_components == 1:
        sigmas = np.array([resid_std])
    else:
        sigmas = resid_std * np.geomspace(0.5, 2.0, n_components)
    sigmas = np.maximum(sigmas, sigma_floor)
    weights = np.full(n_components, 1.0 / n_components)

    # an (almost) exact line leaves only rounding noise in the residuals;
    # EM on that noise is numerically meaningless, so report the floor fit
    if float(resid.std()) <= max(sigma_floor, 1e-12 * (float(np.abs(fluor).max()) + 1.0)):
        sigmas = np.full(n_components, sigma_floor)
        _, ll = _mixture_loglik(resid, weights, sigmas)
        return DetrendFit(
            slope_a=float(slope),
            intercept_b=float(intercept),
            mixture_weights=weights,
            mixture_sigmas=sigmas,
            loglik=ll,
            sigma_floor_hit=True,
            loglik_history=np.array([ll]),
        )

    history = []
    prev_ll = -np.inf
    for _ in range(MAX_EM_ITERS):
        log_dens, ll = _mixture_loglik(resid, weights, sigmas)
        if ll < prev_ll - 1e-9 * (1.0 + abs(prev_ll)):
            raise NumericalError(
                f"EM log-likelihood decreased: {prev_ll} -> {ll}"
            )
        history.append(ll)
        if ll - prev_ll < CONVERGENCE_TOL and len(history) > 1:
            break
        prev_ll = ll

        # E-step: responsibilities
        resp = np.exp(log_dens - logsumexp(log_dens, axis=1, keepdims=True))

        # M-step, line: precision-weighted least squares
        wls = resp @ (1.0 / sigmas**2)
        sw = wls.sum()
        swt = wls @ t
        swtt = wls @ (t * t)
        swf = wls @ fluor
        swtf = wls @ (t * fluor)
        det = swtt * sw - swt * swt
        if det > 0:
            slope = (swtf * sw - swt * swf) / det
            intercept = (swtt * swf - swt * swtf) / det
        resid = fluor - slope * t - intercept

        # M-step, mixture: closed-form weight and sigma updates
        resp_tot = resp.sum(axis=0)
        weights = resp_tot / n
        weights = np.maximum(weights, 1e-12)
        weights /= weights.sum()
        sigmas = np.sqrt((resp * resid[:, None] ** 2).sum(axis=0) / np.maximum(resp_tot, 1e-300))
        sigmas = np.maximum(sigmas, sigma_floor)

    _, final_ll = _mixture_loglik(resid, weights, sigmas)
    return DetrendFit(
        slope_a=float(slope),
        intercept_b=float(intercept),
        mixture_weights=weights,
        mixture_sigmas=sigmas,
        loglik=final_ll,
        sigma_floor_hit=bool(np.any(sigmas <= sigma_floor * (1 + 1e-12))),
        loglik_history=np.asarray(history),
    )


def detrend(fluor, fit: DetrendFit) -> np.ndarray:
    """Subtract the fitted line: ``F_t - a*t - b`` over the bin index."""
    fluor = np.asarray(fluor, dtype=np.float64)
    t = np.arange(fluor.size, dtype=np.float64)
    return fluor - fit.slope_a * t - fit.intercept_b


def percentile_normalize(fluor) -> np.ndarray:
    """Affinely map the trace so its 5th percentile is 0 and 80th is 1.

    Percentiles are computed by linear interpolation between order
    statistics.  Percentile anchoring is robust to outliers and, unlike
    min/max scaling, does not depend on how often the cell fired.
    """
    fluor = np.asarray(fluor, dtype=np.float64)
    if fluor.size < 2:
        raise ValueError("need at least 2 samples")
    lo, hi = np.percentile(fluor, [5.0, 80.0])
    if hi - lo <= 0:
        raise ValueError("degenerate dynamic range: 5th and 80th percentiles are equal")
    return (fluor - lo) / (hi - lo)


def preprocess_recording(rec: Recording, target_hz: float = 100.0) -> BinnedRecording:
    """Full preprocessing path: resample to the common grid, detrend, normalize."""
    binned = resample_to_common(rec, target_hz)
    fit = fit_gsm_trend(binned.fluorescence)
    fluor = percentile_normalize(detrend(binned.fluorescence, fit))
    return BinnedRecording(
        cell_id=binned.cell_id,
        bin_rate_hz=binned.bin_rate_hz,
        fluorescence=fluor,
        spike_counts=binned.spike_counts,
    )
