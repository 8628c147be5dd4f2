"""Benchmark protocols: leave-one-out CV, cross-dataset transfer, and sweeps.

Train/test separation is strict: the held-out cell contributes nothing to
the PCA basis, the model parameters, or the deconvolution parameter choice.
The monotone calibration is an evaluation-side transform, fitted per method
and dataset on the pooled held-out predictions and applied identically to
every method.

Every report records the seeds, fold assignments, and configurations needed
to replay it exactly.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import wilcoxon

from . import metrics as metrics_mod
from .baselines import DeconvConfig, deconvolve, raw_predict
from .errors import DataError
from .features import FeatureMatrix, extract_windows, pca_from_moments, pca_moments, project
from .metrics import (
    MetricsReport,
    cell_row,
    evaluate,
    fit_calibration,
    rebin_factor,
)
from .models import ModelEnsemble, ensemble_rate, save_ensemble
from .preprocess import preprocess_recording
from .signal_io import load_dataset, rebin_counts, rebin_rates
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

PROTOCOLS = ("loocv", "cross_dataset", "freq_sweep", "complexity", "size_sweep")
FREQ_SWEEP_RATES = (2.0, 5.0, 10.0, 25.0, 50.0, 100.0)
RAW = "raw"
DECONV = "deconv"


@dataclass
class ExperimentSpec:
    """Declarative description of one benchmark run."""

    protocol: str
    datasets: list
    kinds: list = field(default_factory=lambda: ["stm"])
    train: dict = field(default_factory=dict)
    baselines: bool = True
    eval_rates_hz: list = field(default_factory=lambda: [25.0])
    pca_variance_threshold: float = 0.95
    window_ms: float = 1000.0
    calibration_knots: int = 10
    deconv_cutoffs_hz: list = field(default_factory=lambda: [2.0, 5.0, 10.0])
    deconv_taus_s: list = field(default_factory=lambda: [0.2, 0.5, 1.0, 2.0])
    sizes: list | None = None
    seed: int = 0
    output_dir: str | None = None
    save_fold_models: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if not self.datasets:
            raise ValueError("need at least one dataset")
        for kind in self.kinds:
            if kind not in ("stm", "lnp", "mlnn"):
                raise ValueError(f"unknown model kind {kind!r}")
        for rate in self.eval_rates_hz:
            rebin_factor(100.0, rate)
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "datasets": [str(d) for d in self.datasets],
            "kinds": list(self.kinds),
            "train": dict(self.train),
            "baselines": self.baselines,
            "eval_rates_hz": list(self.eval_rates_hz),
            "pca_variance_threshold": self.pca_variance_threshold,
            "window_ms": self.window_ms,
            "calibration_knots": self.calibration_knots,
            "deconv_cutoffs_hz": list(self.deconv_cutoffs_hz),
            "deconv_taus_s": list(self.deconv_taus_s),
            "sizes": None if self.sizes is None else list(self.sizes),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "save_fold_models": self.save_fold_models,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown ExperimentSpec keys: {sorted(unknown)}")
        return cls(**d)

    def train_config(self, kind: str, seed: int) -> TrainConfig:
        cfg = dict(self.train)
        cfg["kind"] = kind
        cfg["seed"] = seed
        return TrainConfig.from_dict(cfg)


@dataclass
class ExperimentResult:
    protocol: str
    reports: list
    tables: dict = field(default_factory=dict)
    paired_tests: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# dataset context: preprocessed cells plus cached window statistics

@dataclass
class _Cell:
    cell_id: str
    dataset_id: str
    fluor: np.ndarray
    counts: np.ndarray


class _DatasetContext:
    def __init__(self, cells, spec: ExperimentSpec, dataset_id: str):
        self.dataset_id = dataset_id
        self.cells = cells
        self.spec = spec
        self.windows = [
            extract_windows(c.fluor, window_ms=spec.window_ms) for c in cells
        ]
        self.moments = [pca_moments(w) for w in self.windows]
        self.deconv_grid = [
            DeconvConfig(smooth_cutoff_hz=c, tau_s=t)
            for c, t in itertools.product(spec.deconv_cutoffs_hz, spec.deconv_taus_s)
        ]
        self.deconv_preds = None
        if spec.baselines:
            self.deconv_preds = [
                [self._deconv_one(c, cfg) for c in cells] for cfg in self.deconv_grid
            ]

    @staticmethod
    def _deconv_one(cell: _Cell, cfg: DeconvConfig) -> np.ndarray:
        from .signal_io import BinnedRecording

        binned = BinnedRecording(
            cell_id=cell.cell_id,
            bin_rate_hz=100.0,
            fluorescence=cell.fluor,
            spike_counts=cell.counts,
        )
        return deconvolve(binned, cfg)

    def n_cells(self) -> int:
        return len(self.cells)


def _load_context(dataset_path, spec: ExperimentSpec) -> _DatasetContext:
    recordings = load_dataset(dataset_path)
    if not recordings:
        raise DataError("dataset has no cells", dataset_path)
    cells = []
    for rec in recordings:
        binned = preprocess_recording(rec)
        cells.append(
            _Cell(
                cell_id=rec.cell_id,
                dataset_id=rec.dataset_id,
                fluor=binned.fluorescence,
                counts=binned.spike_counts,
            )
        )
    return _DatasetContext(cells, spec, dataset_id=recordings[0].dataset_id)


def _select_deconv(ctx: _DatasetContext, train_idx, selection_rate: float) -> int:
    """Pick the grid entry with the best mean training-cell correlation."""
    factor = rebin_factor(100.0, selection_rate)
    best_idx, best_score = 0, -np.inf
    for gi, preds in enumerate(ctx.deconv_preds):
        scores = []
        for i in train_idx:
            scores.append(
                metrics_mod.correlation(
                    rebin_rates(preds[i], factor), rebin_counts(ctx.cells[i].counts, factor)
                )
            )
        score = float(np.mean(scores))
        if score > best_score:
            best_idx, best_score = gi, score
    return best_idx


def _fit_models(
    ctx: _DatasetContext, train_idx, kinds, seed: int
) -> tuple[dict, object]:
    """Fit the PCA basis and one ensemble per kind on the given training cells."""
    spec = ctx.spec
    basis = pca_from_moments(
        [ctx.moments[i] for i in train_idx], spec.pca_variance_threshold
    )
    log.info(
        "dataset %s: PCA kept %d components (%.4f of variance) on %d cells",
        ctx.dataset_id, basis.n_kept, basis.variance_fraction_kept, len(train_idx),
    )
    X = np.vstack([project(basis, ctx.windows[i]).data for i in train_idx])
    k = np.concatenate([ctx.cells[i].counts for i in train_idx])
    feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=spec.window_ms)
    ensembles = {}
    for kind in kinds:
        cfg = spec.train_config(kind, seed)
        ensembles[kind] = train(feats, k, cfg, basis).ensemble
    return ensembles, basis


def _predict_cell(ensemble: ModelEnsemble, ctx: _DatasetContext, i: int, basis) -> np.ndarray:
    feats = project(basis, ctx.windows[i])
    return ensemble_rate(ensemble, feats.data)


# ---------------------------------------------------------------------------
# fold execution (sequential or process pool)

_WORKER_CTX = None


def _set_worker_ctx(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _fold_seed(base_seed: int, fold_index: int) -> int:
    return base_seed + 1000 * fold_index


def _run_one_fold(args):
    fold_index, selection_rate = args
    ctx = _WORKER_CTX
    spec = ctx.spec
    train_idx = [j for j in range(ctx.n_cells()) if j != fold_index]
    seed = _fold_seed(spec.seed, fold_index)
    ensembles, basis = _fit_models(ctx, train_idx, spec.kinds, seed)
    rates_by_kind = {
        kind: _predict_cell(ens, ctx, fold_index, basis) for kind, ens in ensembles.items()
    }
    deconv_idx = (
        _select_deconv(ctx, train_idx, selection_rate) if spec.baselines else None
    )
    return {
        "fold_index": fold_index,
        "seed": seed,
        "train_ids": [ctx.cells[j].cell_id for j in train_idx],
        "rates_by_kind": rates_by_kind,
        "deconv_idx": deconv_idx,
        "ensembles": ensembles if spec.save_fold_models else None,
    }


def _run_folds(ctx: _DatasetContext, fold_indices, selection_rate: float):
    spec = ctx.spec
    args = [(i, selection_rate) for i in fold_indices]
    if spec.jobs > 1 and len(args) > 1:
        import multiprocessing as mp

        mp_ctx = mp.get_context("fork")
        with ProcessPoolExecutor(
            max_workers=min(spec.jobs, len(args)),
            mp_context=mp_ctx,
            initializer=_set_worker_ctx,
            initargs=(ctx,),
        ) as pool:
            return list(pool.map(_run_one_fold, args))
    _set_worker_ctx(ctx)
    return [_run_one_fold(a) for a in args]


# ---------------------------------------------------------------------------
# report assembly

def _fold_hash(fold_train_ids) -> str:
    blob = json.dumps(fold_train_ids, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _method_report(
    method: str,
    cell_ids,
    preds_100hz,
    counts_100hz,
    eval_rate_hz: float,
    dataset_id: str,
    n_knots: int,
    meta: dict,
) -> MetricsReport:
    factor = rebin_factor(100.0, eval_rate_hz)
    rebinned_p = [rebin_rates(p, factor) for p in preds_100hz]
    rebinned_c = [rebin_counts(c, factor) for c in counts_100hz]
    valid = [i for i, c in enumerate(rebinned_c) if c.sum() > 0]
    if not valid:
        raise DataError(f"dataset {dataset_id}: no cell has spikes at {eval_rate_hz}Hz")
    calib = fit_calibration(
        [rebinned_p[i] for i in valid], [rebinned_c[i] for i in valid], n_knots=n_knots
    )
    rows = []
    gains, entropies = [], []
    for i, cid in enumerate(cell_ids):
        if i not in valid:
            rows.append(
                {
                    "cell_id": cid,
                    "correlation": None,
                    "info_gain_bits_per_bin": None,
                    "marginal_entropy_bits_per_bin": None,
                    "auc": None,
                    "degenerate_correlation": True,
                    "degenerate_auc": True,
                }
            )
            continue
        cm = evaluate(preds_100hz[i], counts_100hz[i], eval_rate_hz, calib=calib)
        rows.append(cell_row(cid, cm))
        gains.append(cm.info_gain_bits_per_bin)
        entropies.append(cm.marginal_entropy_bits_per_bin)
    rel = metrics_mod.relative_information_gain(gains, entropies)
    return MetricsReport(
        method=method,
        dataset_id=dataset_id,
        eval_rate_hz=eval_rate_hz,
        per_cell=rows,
        relative_info_gain=rel,
        calibration_knots={
            "x": calib.knots_x.tolist(),
            "y": calib.knots_y.tolist(),
        },
        meta=meta,
    )


def _selection_rate(spec: ExperimentSpec) -> float:
    return 25.0 if 25.0 in spec.eval_rates_hz else spec.eval_rates_hz[0]


def _loocv_dataset(ctx: _DatasetContext, spec: ExperimentSpec, output_dir=None):
    """Predictions for each method and cell of one dataset, under LOOCV."""
    n = ctx.n_cells()
    if n < 2:
        raise DataError(f"dataset {ctx.dataset_id}: leave-one-out needs at least 2 cells")
    folds = _run_folds(ctx, range(n), _selection_rate(spec))

    preds = {kind: [None] * n for kind in spec.kinds}
    fold_meta = []
    deconv_selected = []
    for fr in folds:
        i = fr["fold_index"]
        for kind in spec.kinds:
            preds[kind][i] = fr["rates_by_kind"][kind]
        fold_meta.append(
            {"fold_index": i, "seed": fr["seed"], "train_ids": fr["train_ids"]}
        )
        if spec.baselines:
            cfg = ctx.deconv_grid[fr["deconv_idx"]]
            deconv_selected.append(
                {
                    "fold_index": i,
                    "smooth_cutoff_hz": cfg.smooth_cutoff_hz,
                    "tau_s": cfg.tau_s,
                }
            )
        if output_dir is not None and fr["ensembles"] is not None:
            for kind, ens in fr["ensembles"].items():
                save_ensemble(
                    ens, Path(output_dir) / "models" / f"fold_{i:03d}_{kind}.json"
                )
    if spec.baselines:
        preds[RAW] = [
            raw_predict(_as_binned(cell)) for cell in ctx.cells
        ]
        preds[DECONV] = [
            ctx.deconv_preds[folds[i]["deconv_idx"]][i] for i in range(n)
        ]
    meta = {
        "protocol": spec.protocol,
        "seed": spec.seed,
        "folds": fold_meta,
        "fold_hash": _fold_hash([fm["train_ids"] for fm in fold_meta]),
        "train_config": spec.train,
        "window_ms": spec.window_ms,
        "pca_variance_threshold": spec.pca_variance_threshold,
        "deconv_selected": deconv_selected,
    }
    return preds, meta


def _as_binned(cell: _Cell):
    from .signal_io import BinnedRecording

    return BinnedRecording(
        cell_id=cell.cell_id,
        bin_rate_hz=100.0,
        fluorescence=cell.fluor,
        spike_counts=cell.counts,
    )


def _reports_for_predictions(ctx, preds, spec, meta) -> list:
    cell_ids = [c.cell_id for c in ctx.cells]
    counts = [c.counts for c in ctx.cells]
    reports = []
    for method in preds:
        for rate in spec.eval_rates_hz:
            reports.append(
                _method_report(
                    method,
                    cell_ids,
                    preds[method],
                    counts,
                    rate,
                    ctx.dataset_id,
                    spec.calibration_knots,
                    meta,
                )
            )
    return reports


# ---------------------------------------------------------------------------
# protocols

def run_loocv(spec: ExperimentSpec) -> ExperimentResult:
    reports = []
    for dataset in spec.datasets:
        ctx = _load_context(dataset, spec)
        preds, meta = _loocv_dataset(ctx, spec, output_dir=spec.output_dir)
        reports.extend(_reports_for_predictions(ctx, preds, spec, meta))
    return ExperimentResult(protocol="loocv", reports=reports)


def run_freq_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """One LOOCV prediction pass; metrics recomputed per evaluation rate."""
    if spec.eval_rates_hz == [25.0]:
        spec = replace(spec, eval_rates_hz=list(FREQ_SWEEP_RATES))
    result = run_loocv(spec)
    rows = []
    for report in result.reports:
        rows.append(
            {
                "dataset_id": report.dataset_id,
                "method": report.method,
                "eval_rate_hz": report.eval_rate_hz,
                "mean_correlation": report.mean("correlation"),
                "sem_correlation": report.sem("correlation"),
                "mean_info_gain_bits_per_bin": report.mean("info_gain_bits_per_bin"),
                "sem_info_gain_bits_per_bin": report.sem("info_gain_bits_per_bin"),
                "mean_auc": report.mean("auc"),
                "relative_info_gain": report.relative_info_gain,
            }
        )
    rows.sort(key=lambda r: (r["dataset_id"], r["method"], r["eval_rate_hz"]))
    return ExperimentResult(
        protocol="freq_sweep", reports=result.reports, tables={"score_vs_rate": rows}
    )


def run_complexity(spec: ExperimentSpec) -> ExperimentResult:
    """STM vs LNP vs ML-NN on identical folds, with paired sign-rank tests."""
    kinds = spec.kinds if set(spec.kinds) >= {"stm", "lnp", "mlnn"} else ["stm", "lnp", "mlnn"]
    spec = replace(spec, kinds=list(kinds))
    result = run_loocv(spec)
    rate = _selection_rate(spec)
    tests = []
    by_key = {(r.dataset_id, r.method, r.eval_rate_hz): r for r in result.reports}
    for dataset_id in sorted({r.dataset_id for r in result.reports}):
        base = by_key.get((dataset_id, "stm", rate))
        if base is None:
            continue
        base_scores = _score_vector(base, "correlation")
        for other_kind in ("lnp", "mlnn"):
            other = by_key.get((dataset_id, other_kind, rate))
            if other is None:
                continue
            assert other.meta["fold_hash"] == base.meta["fold_hash"]
            tests.append(
                {
                    "dataset_id": dataset_id,
                    "eval_rate_hz": rate,
                    "metric": "correlation",
                    "better": "stm",
                    "worse": other_kind,
                    "mean_difference": float(
                        np.nanmean(base_scores - _score_vector(other, "correlation"))
                    ),
                    "p_value": signed_rank_pvalue(
                        base_scores, _score_vector(other, "correlation")
                    ),
                }
            )
    return ExperimentResult(
        protocol="complexity", reports=result.reports, paired_tests=tests
    )


def run_cross_dataset(spec: ExperimentSpec) -> ExperimentResult:
    """Train on the pooled cells of all other datasets; evaluate each target cell."""
    if len(spec.datasets) < 2:
        raise DataError("cross-dataset generalization needs at least 2 datasets")
    contexts = [_load_context(d, spec) for d in spec.datasets]
    total_cells = sum(c.n_cells() for c in contexts)
    reports = []
    for target_pos, target in enumerate(contexts):
        sources = [c for p, c in enumerate(contexts) if p != target_pos]
        pool_moments = [m for c in sources for m in c.moments]
        basis = pca_from_moments(pool_moments, spec.pca_variance_threshold)
        X = np.vstack(
            [project(basis, w).data for c in sources for w in c.windows]
        )
        k = np.concatenate([cell.counts for c in sources for cell in c.cells])
        pool_size = sum(c.n_cells() for c in sources)
        assert pool_size == total_cells - target.n_cells()
        feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=spec.window_ms)
        seed = _fold_seed(spec.seed, target_pos)
        preds = {}
        for kind in spec.kinds:
            cfg = spec.train_config(kind, seed)
            ens = train(feats, k, cfg, basis).ensemble
            preds[kind] = [
                _predict_cell(ens, target, i, basis) for i in range(target.n_cells())
            ]
        deconv_choice = None
        if spec.baselines:
            preds[RAW] = [raw_predict(_as_binned(c)) for c in target.cells]
            # parameter choice must come from the training pool, not the target
            rate = _selection_rate(spec)
            factor = rebin_factor(100.0, rate)
            best_idx, best_score = 0, -np.inf
            for gi in range(len(target.deconv_grid)):
                scores = []
                for c in sources:
                    for i in range(c.n_cells()):
                        scores.append(
                            metrics_mod.correlation(
                                rebin_rates(c.deconv_preds[gi][i], factor),
                                rebin_counts(c.cells[i].counts, factor),
                            )
                        )
                score = float(np.mean(scores))
                if score > best_score:
                    best_idx, best_score = gi, score
            cfg = target.deconv_grid[best_idx]
            deconv_choice = {"smooth_cutoff_hz": cfg.smooth_cutoff_hz, "tau_s": cfg.tau_s}
            preds[DECONV] = [target.deconv_preds[best_idx][i] for i in range(target.n_cells())]
        meta = {
            "protocol": "cross_dataset",
            "seed": spec.seed,
            "target_dataset": target.dataset_id,
            "train_pool_size": pool_size,
            "train_datasets": [c.dataset_id for c in sources],
            "train_config": spec.train,
            "window_ms": spec.window_ms,
            "pca_variance_threshold": spec.pca_variance_threshold,
            "deconv_selected": deconv_choice,
        }
        reports.extend(_reports_for_predictions(target, preds, spec, meta))
    return ExperimentResult(protocol="cross_dataset", reports=reports)


def run_size_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """Score versus training-set size on one dataset; baselines are untrained and skipped."""
    ctx = _load_context(spec.datasets[0], spec)
    n = ctx.n_cells()
    if n < 3:
        raise DataError("size sweep needs at least 3 cells")
    sizes = spec.sizes
    if sizes is None:
        sizes = sorted({s for s in (1, 2, 4, 8, 16, 32) if s <= n - 1} | {n - 1})
    for s in sizes:
        if not 1 <= s <= n - 1:
            raise ValueError(f"training-set size {s} out of range 1..{n - 1}")

    rate = _selection_rate(spec)
    reports = []
    rows = []
    for size in sizes:
        preds = {kind: [] for kind in spec.kinds}
        fold_meta = []
        for target in range(n):
            rng = np.random.default_rng([spec.seed, size, target])
            others = [j for j in range(n) if j != target]
            train_idx = sorted(rng.choice(others, size=size, replace=False).tolist())
            seed = _fold_seed(spec.seed, size * n + target)
            ensembles, basis = _fit_models(ctx, train_idx, spec.kinds, seed)
            for kind in spec.kinds:
                preds[kind].append(_predict_cell(ensembles[kind], ctx, target, basis))
            fold_meta.append(
                {
                    "size": size,
                    "target": ctx.cells[target].cell_id,
                    "train_ids": [ctx.cells[j].cell_id for j in train_idx],
                    "seed": seed,
                }
            )
        meta = {
            "protocol": "size_sweep",
            "seed": spec.seed,
            "size": size,
            "folds": fold_meta,
            "train_config": spec.train,
            "window_ms": spec.window_ms,
            "pca_variance_threshold": spec.pca_variance_threshold,
        }
        for kind in spec.kinds:
            report = _method_report(
                kind,
                [c.cell_id for c in ctx.cells],
                preds[kind],
                [c.counts for c in ctx.cells],
                rate,
                ctx.dataset_id,
                spec.calibration_knots,
                meta,
            )
            report = replace(report, method=f"{kind}@{size}")
            reports.append(report)
            rows.append(
                {
                    "dataset_id": ctx.dataset_id,
                    "method": kind,
                    "train_size": size,
                    "eval_rate_hz": rate,
                    "mean_correlation": report.mean("correlation"),
                    "sem_correlation": report.sem("correlation"),
                    "mean_info_gain_bits_per_bin": report.mean("info_gain_bits_per_bin"),
                    "mean_auc": report.mean("auc"),
                }
            )
    return ExperimentResult(
        protocol="size_sweep", reports=reports, tables={"score_vs_size": rows}
    )


def _score_vector(report: MetricsReport, key: str) -> np.ndarray:
    return np.array(
        [row[key] if row.get(key) is not None else np.nan for row in report.per_cell]
    )


def signed_rank_pvalue(x, y, alternative: str = "greater") -> float:
    """One-sided Wilcoxon signed-rank p-value for paired scores.

    Exact distribution for n <= 25 without ties (scipy's auto mode), normal
    approximation otherwise.  All-equal pairs carry no evidence (p = 1).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = ~(np.isnan(x) | np.isnan(y))
    d = x[keep] - y[keep]
    if d.size == 0 or np.all(d == 0):
        return 1.0
    res = wilcoxon(d, alternative=alternative, method="auto")
    return float(res.pvalue)


# ---------------------------------------------------------------------------
# entry point and output writing

_RUNNERS = {
    "loocv": run_loocv,
    "cross_dataset": run_cross_dataset,
    "freq_sweep": run_freq_sweep,
    "complexity": run_complexity,
    "size_sweep": run_size_sweep,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Dispatch on the protocol and, when an output directory is set, write artifacts."""
    result = _RUNNERS[spec.protocol](spec)
    if spec.output_dir is not None:
        _write_outputs(spec, result)
    return result


def _write_csv(path: Path, rows, fields):
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _write_outputs(spec: ExperimentSpec, result: ExperimentResult):
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "experiment_spec.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(spec.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")

    score_rows = []
    for report in result.reports:
        name = f"report_{report.dataset_id}_{report.method}_{report.eval_rate_hz:g}hz"
        name = name.replace("/", "_").replace("@", "_size")
        metrics_mod.save_report(report, out / f"{name}.json")
        for row in report.per_cell:
            score_rows.append(
                {
                    "dataset_id": report.dataset_id,
                    "method": report.method,
                    "eval_rate_hz": report.eval_rate_hz,
                    **{k: row.get(k) for k in (
                        "cell_id",
                        "correlation",
                        "info_gain_bits_per_bin",
                        "marginal_entropy_bits_per_bin",
                        "auc",
                    )},
                }
            )
    _write_csv(
        out / "scores.csv",
        score_rows,
        [
            "dataset_id",
            "method",
            "eval_rate_hz",
            "cell_id",
            "correlation",
            "info_gain_bits_per_bin",
            "marginal_entropy_bits_per_bin",
            "auc",
        ],
    )
    for table_name, rows in result.tables.items():
        if rows:
            _write_csv(out / f"{table_name}.csv", rows, list(rows[0].keys()))
    if result.paired_tests:
        with open(out / "paired_tests.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(result.paired_tests, fh, sort_keys=True, indent=2)
            fh.write("\n")


def default_jobs() -> int:
    return os.cpu_count() or 1
