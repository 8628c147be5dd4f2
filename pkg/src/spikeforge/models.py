"""Poisson spike-count models: mixture (STM), log-linear (LNP), and neural-net rates.

All three map a feature vector to an expected spike count per 10 ms bin
through exponentials whose arguments are clamped to [-30, 30], so rates stay
inside (1e-13, 1e13) and remain finite during optimization.  Gradients of the
average log-likelihood are analytic; ensembles combine members by geometric
averaging of rates, which keeps the predictive distribution Poisson.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .errors import DataError
from .features import FeatureMatrix, PcaBasis, extract_windows, project

EXP_CLAMP = 30.0
MODEL_FORMAT_VERSION = 1

STM = "stm"
LNP = "lnp"
MLNN = "mlnn"
MODEL_KINDS = (STM, LNP, MLNN)


@dataclass
class StmParams:
    """Mixture rate: sum over K components of exp(quadratic + linear + offset).

    ``w`` holds the K per-component linear filters (K x D), ``u`` the M
    shared quadratic filters (M x D), ``beta`` their per-component weights
    (K x M), ``b`` the K offsets.
    """

    w: np.ndarray
    u: np.ndarray
    beta: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        self.u = np.asarray(self.u, dtype=np.float64).reshape(-1, self.w.shape[1])
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(
            self.w.shape[0], self.u.shape[0]
        )
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        if self.w.shape[0] < 1:
            raise ValueError("need at least one component")
        if self.b.size != self.w.shape[0]:
            raise ValueError("one offset per component required")

    @property
    def n_components(self) -> int:
        return self.w.shape[0]

    @property
    def n_quadratic(self) -> int:
        return self.u.shape[0]

    @property
    def n_features(self) -> int:
        return self.w.shape[1]


@dataclass
class LnpParams:
    """Log-linear rate: exp(w.x + b)."""

    w: np.ndarray
    b: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).ravel()
        self.b = float(self.b)

    @property
    def n_features(self) -> int:
        return self.w.size


@dataclass
class MlnnParams:
    """Two-hidden-layer rectifier network with an exponential output rate."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=np.float64))
        self.b1 = np.asarray(self.b1, dtype=np.float64).ravel()
        self.W2 = np.atleast_2d(np.asarray(self.W2, dtype=np.float64))
        self.b2 = np.asarray(self.b2, dtype=np.float64).ravel()
        self.w3 = np.asarray(self.w3, dtype=np.float64).ravel()
        self.b3 = float(self.b3)
        h1, d = self.W1.shape
        h2 = self.W2.shape[0]
        if self.b1.size != h1 or self.W2.shape[1] != h1:
            raise ValueError("first hidden layer dimensions inconsistent")
        if self.b2.size != h2 or self.w3.size != h2:
            raise ValueError("second hidden layer dimensions inconsistent")
        del d

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]


@dataclass
class ModelEnsemble:
    """Independently trained members whose rates are geometrically averaged."""

    kind: str
    members: list
    pca_basis: PcaBasis
    preprocessing: str = "gsm-detrend+percentile-normalize"
    bin_rate_hz: float = 100.0
    window_ms: float = 1000.0
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        expected = _PARAM_CLASSES[self.kind]
        dims = {m.n_features for m in self.members}
        if any(not isinstance(m, expected) for m in self.members) or len(dims) != 1:
            raise ValueError("all members must share kind and feature dimension")

    @property
    def n_features(self) -> int:
        return self.members[0].n_features


_PARAM_CLASSES = {STM: StmParams, LNP: LnpParams, MLNN: MlnnParams}


def _as_matrix(x):
    """Accept a single feature vector, a matrix, or a FeatureMatrix."""
    if isinstance(x, FeatureMatrix):
        return x.data, False
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _clamp(z):
    return np.clip(z, -EXP_CLAMP, EXP_CLAMP)


def rate(params, x):
    """Expected spike count per bin; scalar for a single feature vector.

    Inner exponents are clamped at +-30 before exponentiation, so the result
    is always finite and strictly positive.
    """
    X, single = _as_matrix(x)
    if isinstance(params, StmParams):
        if X.shape[1] != params.n_features:
            raise ValueError("feature dimension mismatch")
        q = X @ params.u.T
        z = X @ params.w.T + (q**2) @ params.beta.T + params.b
        out = np.exp(_clamp(z)).sum(axis=1)
    elif isinstance(params, LnpParams):
        if X.shape[1] != params.w.size:
            raise ValueError("feature dimension mismatch")
        out = np.exp(_clamp(X @ params.w + params.b))
    elif isinstance(params, MlnnParams):
        if X.shape[1] != params.n_features:
            raise ValueError("feature dimension mismatch")
        h1 = np.maximum(X @ params.W1.T + params.b1, 0.0)
        h2 = np.maximum(h1 @ params.W2.T + params.b2, 0.0)
        out = np.exp(_clamp(h2 @ params.w3 + params.b3))
    else:
        raise TypeError(f"unsupported parameter type {type(params).__name__}")
    return float(out[0]) if single else out


def poisson_log_likelihood(rates, counts) -> float:
    """Average Poisson log-probability per bin, in nats."""
    rates = np.asarray(rates, dtype=np.float64)
    counts = np.asarray(counts)
    if rates.shape != counts.shape:
        raise ValueError("rates and counts must have equal length")
    if np.any(rates <= 0):
        raise ValueError("rates must be strictly positive")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    return float(np.mean(counts * np.log(rates) - rates - gammaln(counts + 1.0)))


def gradient(params, features, counts):
    """Analytic gradient of the average log-likelihood, shaped like ``params``.

    The clamp on inner exponents is differentiated as identity inside
    (-30, 30) and zero outside; the rectifier uses subgradient 0 at kinks.
    """
    return _rates_and_gradient(params, features, counts)[1]


def loglik_and_gradient(params, features, counts, log_factorial_mean=None):
    """Average log-likelihood and its gradient with one shared forward pass.

    ``log_factorial_mean`` (the count-dependent constant) can be precomputed
    once per training set and passed in to avoid recomputing it every call.
    """
    k = np.asarray(counts, dtype=np.float64).ravel()
    rates, grad = _rates_and_gradient(params, features, k)
    if log_factorial_mean is None:
        log_factorial_mean = float(np.mean(gammaln(k + 1.0)))
    value = float(np.mean(k * np.log(rates) - rates)) - log_factorial_mean
    return value, grad


def _rates_and_gradient(params, features, counts):
    X, _ = _as_matrix(features)
    k = np.asarray(counts, dtype=np.float64).ravel()
    if k.size != X.shape[0]:
        raise ValueError("counts must align with feature rows")
    n = X.shape[0]

    if isinstance(params, StmParams):
        q = X @ params.u.T
        z_raw = X @ params.w.T + (q**2) @ params.beta.T + params.b
        e = np.exp(_clamp(z_raw))
        lam = e.sum(axis=1)
        g = (k / lam - 1.0) / n
        s = g[:, None] * e * ((z_raw > -EXP_CLAMP) & (z_raw < EXP_CLAMP))
        grad_b = s.sum(axis=0)
        grad_w = s.T @ X
        grad_beta = s.T @ (q**2)
        grad_u = 2.0 * ((s @ params.beta) * q).T @ X
        return lam, StmParams(w=grad_w, u=grad_u, beta=grad_beta, b=grad_b)

    if isinstance(params, LnpParams):
        z_raw = X @ params.w + params.b
        lam = np.exp(_clamp(z_raw))
        g = (k / lam - 1.0) / n
        s = g * lam * ((z_raw > -EXP_CLAMP) & (z_raw < EXP_CLAMP))
        return lam, LnpParams(w=X.T @ s, b=float(s.sum()))

    if isinstance(params, MlnnParams):
        a1 = X @ params.W1.T + params.b1
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ params.W2.T + params.b2
        h2 = np.maximum(a2, 0.0)
        z_raw = h2 @ params.w3 + params.b3
        lam = np.exp(_clamp(z_raw))
        g = (k / lam - 1.0) / n
        d3 = g * lam * ((z_raw > -EXP_CLAMP) & (z_raw < EXP_CLAMP))
        d2 = np.outer(d3, params.w3) * (a2 > 0)
        d1 = (d2 @ params.W2) * (a1 > 0)
        return lam, MlnnParams(
            W1=d1.T @ X,
            b1=d1.sum(axis=0),
            W2=d2.T @ h1,
            b2=d2.sum(axis=0),
            w3=h2.T @ d3,
            b3=float(d3.sum()),
        )

    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def ensemble_rate(ensemble: ModelEnsemble, x):
    """Geometric mean of member rates: exp(mean of log member rates)."""
    X, single = _as_matrix(x)
    log_sum = np.zeros(X.shape[0])
    for member in ensemble.members:
        log_sum += np.log(rate(member, X))
    out = np.exp(log_sum / len(ensemble.members))
    return float(out[0]) if single else out


def sample_spike_train(rates, seed: int) -> np.ndarray:
    """Draw one independent Poisson count per bin; deterministic in the seed."""
    rates = np.asarray(rates, dtype=np.float64)
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite and nonnegative")
    return np.random.default_rng(seed).poisson(rates)


def predict_rates(ensemble: ModelEnsemble, fluor_preprocessed) -> np.ndarray:
    """Per-bin ensemble rates for a preprocessed trace at the model's bin rate."""
    windows = extract_windows(
        fluor_preprocessed, window_ms=ensemble.window_ms, bin_rate_hz=ensemble.bin_rate_hz
    )
    feats = project(ensemble.pca_basis, windows, bin_rate_hz=ensemble.bin_rate_hz)
    return ensemble_rate(ensemble, feats.data)


# ---------------------------------------------------------------------------
# flat parameter vectors (optimizer interface)

_STM_FIELDS = ("w", "u", "beta", "b")
_LNP_FIELDS = ("w", "b")
_MLNN_FIELDS = ("W1", "b1", "W2", "b2", "w3", "b3")
_FIELD_ORDER = {StmParams: _STM_FIELDS, LnpParams: _LNP_FIELDS, MlnnParams: _MLNN_FIELDS}
_OFFSET_FIELDS = {"b", "b1", "b2", "b3"}


def params_to_vector(params) -> np.ndarray:
    parts = [np.atleast_1d(np.asarray(getattr(params, f), dtype=np.float64)).ravel()
             for f in _FIELD_ORDER[type(params)]]
    return np.concatenate(parts)


def vector_to_params(vec, template):
    vec = np.asarray(vec, dtype=np.float64)
    kwargs = {}
    pos = 0
    for f in _FIELD_ORDER[type(template)]:
        ref = getattr(template, f)
        if np.isscalar(ref):
            kwargs[f] = float(vec[pos])
            pos += 1
        else:
            size = ref.size
            kwargs[f] = vec[pos : pos + size].reshape(ref.shape)
            pos += size
    if pos != vec.size:
        raise ValueError("vector length does not match template")
    return type(template)(**kwargs)


def weight_mask(params) -> np.ndarray:
    """1 for filter/weight entries, 0 for offsets, in flat-vector order."""
    parts = []
    for f in _FIELD_ORDER[type(params)]:
        ref = getattr(params, f)
        size = 1 if np.isscalar(ref) else ref.size
        parts.append(np.zeros(size) if f in _OFFSET_FIELDS else np.ones(size))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# model file serialization

def _params_to_json(params) -> dict:
    out = {}
    for f in _FIELD_ORDER[type(params)]:
        ref = getattr(params, f)
        out[f] = float(ref) if np.isscalar(ref) else np.asarray(ref).tolist()
    return out


def _params_from_json(kind: str, d: dict):
    cls = _PARAM_CLASSES[kind]
    try:
        return cls(**{f: d[f] for f in _FIELD_ORDER[cls]})
    except KeyError as exc:
        raise DataError(f"model member missing field {exc}") from None


def save_ensemble(ensemble: ModelEnsemble, path) -> Path:
    path = Path(path)
    basis = ensemble.pca_basis
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": ensemble.kind,
        "bin_rate_hz": ensemble.bin_rate_hz,
        "window_ms": ensemble.window_ms,
        "preprocessing": ensemble.preprocessing,
        "pca_basis": {
            "mean": basis.mean.tolist(),
            "components": basis.components.tolist(),
            "explained_variance": basis.explained_variance.tolist(),
            "variance_fraction_kept": basis.variance_fraction_kept,
        },
        "members": [_params_to_json(m) for m in ensemble.members],
        "train_config": ensemble.train_config,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def load_ensemble(path) -> ModelEnsemble:
    path = Path(path)
    if not path.is_file():
        raise DataError("missing file", path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc}", path) from None
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format_version {version!r}", path)
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise DataError(f"unknown model kind {kind!r}", path)
    try:
        b = doc["pca_basis"]
        basis = PcaBasis(
            mean=b["mean"],
            components=b["components"],
            explained_variance=b["explained_variance"],
            variance_fraction_kept=float(b["variance_fraction_kept"]),
        )
        members = [_params_from_json(kind, m) for m in doc["members"]]
        return ModelEnsemble(
            kind=kind,
            members=members,
            pca_basis=basis,
            preprocessing=doc.get("preprocessing", ""),
            bin_rate_hz=float(doc["bin_rate_hz"]),
            window_ms=float(doc["window_ms"]),
            train_config=doc.get("train_config", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file: {exc}", path) from None
