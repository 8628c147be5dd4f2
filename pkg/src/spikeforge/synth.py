"""Artificial recordings from a first-order calcium dynamics model.

Each cell draws a firing rate, samples per-bin spike counts from a Poisson,
accumulates them through an exponentially decaying calcium concentration
``C_t = gamma * C_{t-1} + k_t`` (starting from zero), and observes
``Poisson(gain * C_t + baseline)`` fluorescence per bin.

The default rate range (up to 400 spikes/s) is far above cortical firing
rates but is kept as the faithful default; override ``rate_max_hz`` for more
biological regimes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .signal_io import Recording, save_dataset


@dataclass
class SynthConfig:
    gamma: float = 0.98
    gain: float = 100.0
    baseline: float = 1.0
    rate_min_hz: float = 0.0
    rate_max_hz: float = 400.0
    duration_s: float = 100.0
    sample_rate_hz: float = 100.0
    n_cells: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.gain <= 0 or self.baseline < 0:
            raise ValueError("gain must be positive and baseline nonnegative")
        if self.rate_min_hz < 0 or self.rate_min_hz >= self.rate_max_hz:
            raise ValueError("need 0 <= rate_min_hz < rate_max_hz")
        if self.duration_s <= 0 or self.sample_rate_hz <= 0 or self.n_cells < 1:
            raise ValueError("duration, sample rate, and n_cells must be positive")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d)


def calcium_trace(spike_counts, gamma: float) -> np.ndarray:
    """Run the decay recursion ``C_t = gamma * C_{t-1} + k_t`` with ``C_0 = 0``."""
    return lfilter([1.0], [1.0, -gamma], np.asarray(spike_counts, dtype=np.float64))


def _spike_times_from_counts(counts, rate_hz: float) -> np.ndarray:
    """Place spikes at their bin centers, spread by 0.1 ms to stay strictly sorted."""
    idx = np.nonzero(counts)[0]
    if idx.size == 0:
        return np.empty(0)
    reps = counts[idx]
    centers = np.repeat((idx + 0.5) / rate_hz, reps)
    starts = np.repeat(np.cumsum(reps) - reps, reps)
    within = np.arange(reps.sum()) - starts
    return centers + 1e-4 * within


def generate_cell(cfg: SynthConfig, cell_index: int, rate_hz: float | None = None) -> Recording:
    """Sample one cell; draws are deterministic in ``(cfg.seed, cell_index)``.

    ``rate_hz`` overrides the random rate draw (useful for controlled tests);
    by default the rate is uniform on ``(rate_min_hz, rate_max_hz]``.
    """
    rng = np.random.default_rng([cfg.seed, cell_index])
    if rate_hz is None:
        # uniform on the half-open (rate_min, rate_max]: subtract a [0, span) draw from the top
        span = cfg.rate_max_hz - cfg.rate_min_hz
        rate_hz = cfg.rate_max_hz - rng.uniform(0.0, span)
    n_bins = int(round(cfg.duration_s * cfg.sample_rate_hz))
    rate_per_bin = rate_hz / cfg.sample_rate_hz

    counts = rng.poisson(rate_per_bin, n_bins)
    concentration = calcium_trace(counts, cfg.gamma)
    fluor = rng.poisson(cfg.gain * concentration + cfg.baseline).astype(np.float64)

    return Recording(
        cell_id=f"cell_{cell_index:03d}",
        dataset_id="synthetic",
        fluorescence=fluor,
        fluor_rate_hz=cfg.sample_rate_hz,
        spike_times_s=_spike_times_from_counts(counts, cfg.sample_rate_hz),
        indicator="synthetic",
        meta={
            "true_rate_hz": repr(float(rate_hz)),
            "gamma": repr(cfg.gamma),
            "gain": repr(cfg.gain),
            "baseline": repr(cfg.baseline),
        },
    )


def generate_dataset(cfg: SynthConfig, out_dir, dataset_id: str = "synthetic") -> list[Recording]:
    """Write ``cfg.n_cells`` bundles plus the dataset index; returns the recordings."""
    recordings = []
    for i in range(cfg.n_cells):
        rec = generate_cell(cfg, i)
        rec.dataset_id = dataset_id
        recordings.append(rec)
    save_dataset(recordings, Path(out_dir), dataset_id=dataset_id)
    return recordings
