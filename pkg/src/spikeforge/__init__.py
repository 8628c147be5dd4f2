"""Spike inference from calcium fluorescence traces.

Learns probabilistic maps from preprocessed fluorescence windows to per-bin
Poisson spike counts (mixture, log-linear, and neural-net rate models), and
ships the surrounding benchmark machinery: synthetic data generation,
reference baselines, evaluation metrics, and cross-validation protocols.
"""

from .baselines import DeconvConfig, deconvolve, raw_predict
from .errors import DataError, NumericalError, SpikeforgeError, UsageError
from .features import FeatureMatrix, PcaBasis, extract_windows, fit_pca, project
from .harness import ExperimentSpec, run_experiment
from .metrics import (
    MetricsReport,
    MonotoneCalibration,
    auc,
    correlation,
    evaluate,
    fit_calibration,
    information_gain,
    marginal_entropy,
    relative_information_gain,
)
from .models import (
    LnpParams,
    MlnnParams,
    ModelEnsemble,
    StmParams,
    ensemble_rate,
    gradient,
    load_ensemble,
    poisson_log_likelihood,
    predict_rates,
    rate,
    sample_spike_train,
    save_ensemble,
)
from .preprocess import (
    DetrendFit,
    detrend,
    fit_gsm_trend,
    percentile_normalize,
    preprocess_recording,
)
from .signal_io import (
    BinnedRecording,
    Recording,
    load_dataset,
    load_recording,
    rebin_counts,
    rebin_rates,
    resample_to_common,
    save_dataset,
    save_recording,
)
from .synth import SynthConfig, generate_cell, generate_dataset
from .trainer import OptimResult, TrainConfig, minimize, random_init, train

__version__ = "0.1.0"

__all__ = [
    "BinnedRecording",
    "DataError",
    "DeconvConfig",
    "DetrendFit",
    "ExperimentSpec",
    "FeatureMatrix",
    "LnpParams",
    "MetricsReport",
    "MlnnParams",
    "ModelEnsemble",
    "MonotoneCalibration",
    "NumericalError",
    "OptimResult",
    "PcaBasis",
    "Recording",
    "SpikeforgeError",
    "StmParams",
    "SynthConfig",
    "TrainConfig",
    "UsageError",
    "auc",
    "correlation",
    "deconvolve",
    "detrend",
    "ensemble_rate",
    "evaluate",
    "extract_windows",
    "fit_calibration",
    "fit_gsm_trend",
    "fit_pca",
    "generate_cell",
    "generate_dataset",
    "gradient",
    "information_gain",
    "load_dataset",
    "load_ensemble",
    "load_recording",
    "marginal_entropy",
    "minimize",
    "percentile_normalize",
    "poisson_log_likelihood",
    "predict_rates",
    "preprocess_recording",
    "project",
    "random_init",
    "rate",
    "raw_predict",
    "rebin_counts",
    "rebin_rates",
    "relative_information_gain",
    "resample_to_common",
    "run_experiment",
    "sample_spike_train",
    "save_dataset",
    "save_ensemble",
    "save_recording",
    "train",
]
