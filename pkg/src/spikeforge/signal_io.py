"""Recording containers, bundle I/O, and resampling onto the common time grid.

A recording bundle is a directory holding three files:

* ``trace.csv``  -- header ``t_s,f``; one fluorescence sample per row,
  timestamps strictly increasing.
* ``spikes.csv`` -- header ``t_s``; one spike time per row, strictly
  ascending (may contain no rows).
* ``meta.json``  -- keys ``cell_id``, ``dataset_id``, ``indicator``,
  ``fluor_rate_hz``; any further keys are kept as free-form string metadata.

A dataset is a directory of bundles plus ``dataset.json`` listing the member
bundle names.

Time conventions: sample ``i`` of a trace recorded at rate ``r`` covers the
interval ``[i/r, (i+1)/r)`` and is located at its center ``(i + 0.5)/r``.
Spike times on a bin boundary belong to the bin on the right (half-open
intervals), so a spike exactly at the trace end falls outside every bin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

COMMON_RATE_HZ = 100.0

_META_KEYS = ("cell_id", "dataset_id", "indicator", "fluor_rate_hz")


@dataclass
class Recording:
    """A raw fluorescence trace with simultaneously recorded spike times."""

    cell_id: str
    dataset_id: str
    fluorescence: np.ndarray
    fluor_rate_hz: float
    spike_times_s: np.ndarray
    indicator: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fluorescence = np.asarray(self.fluorescence, dtype=np.float64)
        self.spike_times_s = np.asarray(self.spike_times_s, dtype=np.float64)
        if self.fluor_rate_hz <= 0:
            raise ValueError(f"fluor_rate_hz must be positive, got {self.fluor_rate_hz}")
        if self.fluorescence.size == 0:
            raise ValueError("fluorescence trace is empty")
        if self.spike_times_s.size:
            if self.spike_times_s[0] < 0:
                raise ValueError("spike times must be nonnegative")
            if np.any(np.diff(self.spike_times_s) <= 0):
                raise ValueError("spike times must be strictly ascending")
            if self.spike_times_s[-1] > self.duration_s:
                raise ValueError("spike beyond trace end")

    @property
    def duration_s(self) -> float:
        return self.fluorescence.size / self.fluor_rate_hz

    @property
    def n_spikes(self) -> int:
        return int(self.spike_times_s.size)


@dataclass
class BinnedRecording:
    """Fluorescence and spike counts on a regular grid (default 100 Hz)."""

    cell_id: str
    bin_rate_hz: float
    fluorescence: np.ndarray
    spike_counts: np.ndarray

    def __post_init__(self):
        self.fluorescence = np.asarray(self.fluorescence, dtype=np.float64)
        self.spike_counts = np.asarray(self.spike_counts, dtype=np.int64)
        if self.bin_rate_hz <= 0:
            raise ValueError("bin_rate_hz must be positive")
        if self.fluorescence.shape != self.spike_counts.shape:
            raise ValueError(
                f"fluorescence ({self.fluorescence.shape}) and spike_counts "
                f"({self.spike_counts.shape}) must have equal length"
            )
        if np.any(self.spike_counts < 0):
            raise ValueError("spike counts must be nonnegative")

    @property
    def n_bins(self) -> int:
        return int(self.fluorescence.size)


def _fmt(x) -> str:
    # repr of a python float round-trips exactly through text
    return repr(float(x))


def _read_float(token: str, path, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataError(f"malformed numeric field {token!r}", path, line) from None


def _read_csv(path: Path, header: str):
    """Read a small CSV with the exact expected header; yields (line_no, fields)."""
    if not path.is_file():
        raise DataError("missing file", path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != header:
        raise DataError(f"expected header {header!r}", path, 1)
    n_cols = header.count(",") + 1
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != n_cols:
            raise DataError(f"expected {n_cols} fields, got {len(fields)}", path, i)
        rows.append((i, fields))
    return rows


def load_recording(bundle_path) -> Recording:
    """Load a recording bundle directory into a validated :class:`Recording`."""
    bundle = Path(bundle_path)
    if not bundle.is_dir():
        raise DataError("missing bundle directory", bundle)

    meta_path = bundle / "meta.json"
    if not meta_path.is_file():
        raise DataError("missing file", meta_path)
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc}", meta_path) from None
    for key in _META_KEYS:
        if key not in meta:
            raise DataError(f"missing key {key!r}", meta_path)
    try:
        rate = float(meta["fluor_rate_hz"])
    except (TypeError, ValueError):
        raise DataError("malformed numeric field 'fluor_rate_hz'", meta_path) from None
    if rate <= 0:
        raise DataError(f"nonpositive sampling rate {rate}", meta_path)

    trace_path = bundle / "trace.csv"
    rows = _read_csv(trace_path, "t_s,f")
    if not rows:
        raise DataError("empty trace", trace_path)
    t_prev = -np.inf
    fluor = np.empty(len(rows))
    for j, (line_no, fields) in enumerate(rows):
        t = _read_float(fields[0], trace_path, line_no)
        if t <= t_prev:
            raise DataError("timestamps must be strictly increasing", trace_path, line_no)
        t_prev = t
        fluor[j] = _read_float(fields[1], trace_path, line_no)

    spikes_path = bundle / "spikes.csv"
    srows = _read_csv(spikes_path, "t_s")
    spikes = np.empty(len(srows))
    s_prev = -np.inf
    duration = fluor.size / rate
    for j, (line_no, fields) in enumerate(srows):
        t = _read_float(fields[0], spikes_path, line_no)
        if t <= s_prev:
            raise DataError("spike times must be strictly ascending", spikes_path, line_no)
        if t < 0:
            raise DataError("negative spike time", spikes_path, line_no)
        if t > duration:
            raise DataError("spike beyond trace end", spikes_path, line_no)
        s_prev = t
        spikes[j] = t

    extra = {k: str(v) for k, v in meta.items() if k not in _META_KEYS}
    return Recording(
        cell_id=str(meta["cell_id"]),
        dataset_id=str(meta["dataset_id"]),
        fluorescence=fluor,
        fluor_rate_hz=rate,
        spike_times_s=spikes,
        indicator=str(meta["indicator"]),
        meta=extra,
    )


def save_recording(rec: Recording, bundle_path) -> Path:
    """Write a :class:`Recording` as a bundle directory; returns the path.

    Floats are written with ``repr`` so a save/load round trip is exact.
    """
    bundle = Path(bundle_path)
    bundle.mkdir(parents=True, exist_ok=True)

    centers = (np.arange(rec.fluorescence.size) + 0.5) / rec.fluor_rate_hz
    with open(bundle / "trace.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_s,f\n")
        for t, v in zip(centers, rec.fluorescence):
            fh.write(f"{_fmt(t)},{_fmt(v)}\n")
    with open(bundle / "spikes.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t_s\n")
        for t in rec.spike_times_s:
            fh.write(f"{_fmt(t)}\n")
    meta = {
        "cell_id": rec.cell_id,
        "dataset_id": rec.dataset_id,
        "indicator": rec.indicator,
        "fluor_rate_hz": rec.fluor_rate_hz,
    }
    meta.update({k: str(v) for k, v in rec.meta.items()})
    with open(bundle / "meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return bundle


def load_dataset(dataset_path) -> list[Recording]:
    """Load all bundles listed in a dataset directory's ``dataset.json``."""
    root = Path(dataset_path)
    index_path = root / "dataset.json"
    if not index_path.is_file():
        raise DataError("missing file", index_path)
    with open(index_path, "r", encoding="utf-8") as fh:
        try:
            index = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc}", index_path) from None
    if "cells" not in index or not isinstance(index["cells"], list):
        raise DataError("expected a 'cells' list", index_path)
    return [load_recording(root / name) for name in index["cells"]]


def save_dataset(recordings, dataset_path, dataset_id=None) -> Path:
    """Write recordings as bundles plus a ``dataset.json`` index."""
    root = Path(dataset_path)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for rec in recordings:
        save_recording(rec, root / rec.cell_id)
        names.append(rec.cell_id)
    index = {"format_version": 1, "cells": names}
    if dataset_id is not None:
        index["dataset_id"] = dataset_id
    elif recordings:
        index["dataset_id"] = recordings[0].dataset_id
    with open(root / "dataset.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(index, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return root


def resample_to_common(rec: Recording, target_hz: float = COMMON_RATE_HZ) -> BinnedRecording:
    """Resample a recording onto a regular grid (default 100 Hz).

    Fluorescence is linearly interpolated at the target bin centers
    ``(i + 0.5)/target_hz`` from the native sample centers, with end values
    held constant beyond the first/last sample.  Spike counts are histogram
    counts over the half-open bins ``[i/target_hz, (i+1)/target_hz)``.
    """
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    duration = rec.duration_s
    n_bins = int(np.floor(duration * target_hz + 1e-9))
    if n_bins < 1:
        raise ValueError(
            f"trace duration {duration:.6g}s is shorter than one bin at {target_hz}Hz"
        )

    src_centers = (np.arange(rec.fluorescence.size) + 0.5) / rec.fluor_rate_hz
    dst_centers = (np.arange(n_bins) + 0.5) / target_hz
    fluor = np.interp(dst_centers, src_centers, rec.fluorescence)

    edges = np.arange(n_bins + 1) / target_hz
    idx = np.searchsorted(edges, rec.spike_times_s, side="right") - 1
    idx = idx[(idx >= 0) & (idx < n_bins)]
    counts = np.bincount(idx, minlength=n_bins)

    return BinnedRecording(
        cell_id=rec.cell_id,
        bin_rate_hz=target_hz,
        fluorescence=fluor,
        spike_counts=counts,
    )


def _rebin(values: np.ndarray, factor: int) -> np.ndarray:
    if not float(factor).is_integer() or factor < 1:
        raise ValueError(f"rebin factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return values.copy()
    n = (values.size // factor) * factor
    return values[:n].reshape(-1, factor).sum(axis=1)


def rebin_counts(counts, factor: int) -> np.ndarray:
    """Sum spike counts over consecutive groups of ``factor`` bins.

    A trailing group shorter than ``factor`` is dropped.
    """
    return _rebin(np.asarray(counts, dtype=np.int64), factor)


def rebin_rates(rates, factor: int) -> np.ndarray:
    """Sum expected counts over consecutive groups of ``factor`` bins.

    Expected counts add under bin union, so the result is the rate sequence
    at ``1/factor`` of the input rate.  Trailing partial groups are dropped.
    """
    return _rebin(np.asarray(rates, dtype=np.float64), factor)
