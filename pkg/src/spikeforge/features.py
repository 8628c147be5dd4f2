"""Windowed fluorescence features and their principal-component projection.

Each time bin is described by the surrounding stretch of preprocessed
fluorescence (1000 ms by default).  Windows from the training cells are
pooled into a single PCA basis that keeps just enough components to explain
the requested variance fraction; held-out cells are projected with that
same basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class PcaBasis:
    """Column mean plus orthonormal principal directions (rows of ``components``)."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    variance_fraction_kept: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.components = np.atleast_2d(np.asarray(self.components, dtype=np.float64))
        self.explained_variance = np.asarray(self.explained_variance, dtype=np.float64)
        if self.components.shape[1] != self.mean.size:
            raise ValueError("component length does not match mean length")
        if self.components.shape[0] != self.explained_variance.size:
            raise ValueError("one explained-variance entry per component required")

    @property
    def n_kept(self) -> int:
        return self.components.shape[0]

    @property
    def window_len(self) -> int:
        return self.mean.size


@dataclass
class FeatureMatrix:
    """Projected window coordinates, one row per time bin."""

    data: np.ndarray
    bin_rate_hz: float
    window_ms: float

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_features(self) -> int:
        return self.data.shape[1]


def window_len_bins(window_ms: float, bin_rate_hz: float = 100.0) -> int:
    return int(round(window_ms * bin_rate_hz / 1000.0))


def extract_windows(fluor, window_ms: float = 1000.0, bin_rate_hz: float = 100.0) -> np.ndarray:
    """Cut one centered fluorescence window per bin, replicating edge samples.

    Row ``t`` covers source bins ``[t - L//2, t - L//2 + L)`` where
    ``L = round(window_ms * bin_rate_hz / 1000)``; indices outside the trace
    repeat the first/last sample.  For even ``L`` the window extends one bin
    further into the past than the future.
    """
    fluor = np.asarray(fluor, dtype=np.float64)
    if fluor.ndim != 1 or fluor.size == 0:
        raise ValueError("need a nonempty 1-D trace")
    length = window_len_bins(window_ms, bin_rate_hz)
    if length < 1:
        raise ValueError("window must span at least one bin")
    left = length // 2
    padded = np.pad(fluor, (left, length - 1 - left), mode="edge")
    return sliding_window_view(padded, length).copy()


def _pca_from_moments(n_rows, col_sum, gram, variance_threshold) -> PcaBasis:
    if n_rows < 2:
        raise ValueError("need at least 2 rows to fit a basis")
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError("variance_threshold must be in (0, 1]")
    mean = col_sum / n_rows
    cov = (gram - n_rows * np.outer(mean, mean)) / (n_rows - 1)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals[::-1], 0.0)
    evecs = evecs[:, ::-1]
    total = evals.sum()
    if total <= 0:
        raise ValueError("zero total variance")
    cum_frac = np.cumsum(evals) / total
    n_kept = int(np.searchsorted(cum_frac, variance_threshold - 1e-12) + 1)
    components = evecs[:, :n_kept].T.copy()
    # sign convention: the largest-magnitude entry of each component is positive
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaBasis(
        mean=mean,
        components=components,
        explained_variance=evals[:n_kept],
        variance_fraction_kept=float(cum_frac[n_kept - 1]),
    )


def pca_moments(windows) -> tuple:
    """Sufficient statistics ``(n_rows, column sum, Gram matrix)`` of one block."""
    block = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    return block.shape[0], block.sum(axis=0), block.T @ block


def pca_from_moments(moments, variance_threshold: float = 0.95) -> PcaBasis:
    """Fit a basis from accumulated block statistics (see :func:`pca_moments`)."""
    n_rows = 0
    col_sum = None
    gram = None
    for n, s, g in moments:
        if col_sum is None:
            col_sum = s.copy()
            gram = g.copy()
        else:
            if s.size != col_sum.size:
                raise ValueError("window length differs between blocks")
            col_sum += s
            gram += g
        n_rows += n
    if col_sum is None:
        raise ValueError("no moment blocks given")
    return _pca_from_moments(n_rows, col_sum, gram, variance_threshold)


def fit_pca(windows, variance_threshold: float = 0.95) -> PcaBasis:
    """Fit a basis keeping the fewest components whose variance mass reaches the threshold."""
    return pca_from_moments([pca_moments(windows)], variance_threshold)


def fit_pca_pooled(window_matrices, variance_threshold: float = 0.95) -> PcaBasis:
    """Fit one basis on the union of several window matrices.

    Accumulates per-block statistics, so pooling does not materialize the
    stacked matrix; the result equals ``fit_pca`` on the concatenation.
    """
    return pca_from_moments(
        (pca_moments(block) for block in window_matrices), variance_threshold
    )


def project(basis: PcaBasis, windows, bin_rate_hz: float = 100.0) -> FeatureMatrix:
    """Project windows onto the basis: ``(window - mean) @ components.T`` per row."""
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    if windows.shape[1] != basis.window_len:
        raise ValueError(
            f"window length {windows.shape[1]} does not match basis length {basis.window_len}"
        )
    data = (windows - basis.mean) @ basis.components.T
    window_ms = basis.window_len * 1000.0 / bin_rate_hz
    return FeatureMatrix(data=data, bin_rate_hz=bin_rate_hz, window_ms=window_ms)


def reconstruct(basis: PcaBasis, features) -> np.ndarray:
    """Map projected coordinates back to window space (inverse of ``project`` on the subspace)."""
    data = features.data if isinstance(features, FeatureMatrix) else np.atleast_2d(features)
    return data @ basis.components + basis.mean
