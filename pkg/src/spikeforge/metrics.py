"""Evaluation metrics: correlation, information gain, marginal entropy, AUC.

Information gain is the average Poisson log-likelihood ratio of the
(calibrated) predicted rates against the constant mean-rate model.  All
likelihood terms are computed in nats and converted to bits at the end, so
the gain of a constant predictor is exactly zero and the marginal entropy is
an exact upper bound.

Because only likelihood-trained models emit calibrated Poisson rates, every
method is granted one monotone piecewise-linear transform of its predictions,
fitted to maximize the information gain summed over cells, before the gain is
scored.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.optimize
from scipy.special import gammaln
from scipy.stats import rankdata

from .errors import DataError
from .signal_io import rebin_counts, rebin_rates

LN2 = float(np.log(2.0))
RATE_FLOOR = 1e-8
REPORT_FORMAT_VERSION = 1


@dataclass
class MonotoneCalibration:
    """Nondecreasing piecewise-linear map applied to predictions before scoring.

    Evaluation interpolates linearly between knots, holds the end values
    constant outside the knot range, and floors the output at 1e-8.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray

    def __post_init__(self):
        self.knots_x = np.asarray(self.knots_x, dtype=np.float64).ravel()
        self.knots_y = np.asarray(self.knots_y, dtype=np.float64).ravel()
        if self.knots_x.size != self.knots_y.size or self.knots_x.size < 1:
            raise ValueError("need matching, nonempty knot arrays")
        if np.any(np.diff(self.knots_x) <= 0):
            raise ValueError("knots_x must be strictly increasing")
        if np.any(np.diff(self.knots_y) < 0):
            raise ValueError("knots_y must be nondecreasing")
        if np.any(self.knots_y < 0):
            raise ValueError("knots_y must be nonnegative")

    def __call__(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return np.maximum(np.interp(values, self.knots_x, self.knots_y), RATE_FLOOR)


def _pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    if x.size < 2:
        raise ValueError("need at least 2 bins")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(xc @ xc))
    sy = float(np.sqrt(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        return 0.0, True
    return float((xc @ yc) / (sx * sy)), False


def correlation(pred_rates, counts) -> float:
    """Pearson correlation; 0 when either side has zero variance."""
    r, _ = _pearson(pred_rates, counts)
    return r


def marginal_entropy(counts) -> float:
    """Entropy rate (bits per bin) of the counts under the constant-rate model.

    Equals the negative average log2-probability of the observed counts
    under a Poisson at the empirical mean, and upper-bounds any achievable
    information gain.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("empty counts")
    lam = float(counts.mean())
    if lam <= 0:
        raise ValueError("zero-rate cell")
    return float(
        (np.mean(gammaln(counts + 1.0)) - lam * np.log(lam) + lam) / LN2
    )


def information_gain(pred_rates, counts, calib: MonotoneCalibration | None = None) -> float:
    """Bits per bin gained over the constant mean-rate predictor.

    Predictions pass through ``calib`` when given (otherwise only the 1e-8
    floor is applied) and are scored as Poisson rates.
    """
    pred_rates = np.asarray(pred_rates, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if pred_rates.shape != counts.shape:
        raise ValueError("length mismatch")
    lam = float(counts.mean()) if counts.size else 0.0
    if lam <= 0:
        raise ValueError("zero-rate cell")
    mu = calib(pred_rates) if calib is not None else np.maximum(pred_rates, RATE_FLOOR)
    gain_nats = float(np.mean(counts * np.log(mu / lam)) + lam - np.mean(mu))
    return gain_nats / LN2


def auc(pred_rates, counts) -> float:
    """Probability that a spike bin's prediction exceeds a no-spike bin's.

    Computed as the rank-sum (Mann-Whitney) statistic on counts binarized at
    one spike per bin; ties count one half.
    """
    pred_rates = np.asarray(pred_rates, dtype=np.float64)
    counts = np.asarray(counts)
    if pred_rates.shape != counts.shape:
        raise ValueError("length mismatch")
    positive = counts >= 1
    n_pos = int(positive.sum())
    n_neg = int(positive.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need both spike and no-spike bins")
    ranks = rankdata(pred_rates)
    u = float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def relative_information_gain(info_gains, entropies) -> float:
    """Summed per-cell gain divided by summed per-cell entropy."""
    ig = np.asarray(info_gains, dtype=np.float64)
    hm = np.asarray(entropies, dtype=np.float64)
    if ig.size == 0 or ig.shape != hm.shape:
        raise ValueError("need matching, nonempty score arrays")
    total = float(hm.sum())
    if total <= 0:
        raise ValueError("entropy sum must be positive")
    return float(ig.sum()) / total


# ---------------------------------------------------------------------------
# calibration fitting

def _gain_and_knot_gradient(preds, counts, knots_x, knots_y):
    """Summed information gain (nats) and its gradient w.r.t. the knot heights."""
    total = 0.0
    grad_y = np.zeros_like(knots_y)
    for p, k in zip(preds, counts):
        lam = float(k.mean())
        mu_raw = np.interp(p, knots_x, knots_y)
        mu = np.maximum(mu_raw, RATE_FLOOR)
        t = p.size
        total += float(np.sum(k * np.log(mu / lam)) / t + lam - np.sum(mu) / t)
        dmu = (k / mu - 1.0) / t
        dmu = np.where(mu_raw >= RATE_FLOOR, dmu, 0.0)
        # distribute interpolation weights onto the bracketing knots
        seg = np.clip(np.searchsorted(knots_x, p, side="right") - 1, 0, knots_x.size - 2)
        width = knots_x[seg + 1] - knots_x[seg]
        frac = np.clip((p - knots_x[seg]) / width, 0.0, 1.0)
        np.add.at(grad_y, seg, dmu * (1.0 - frac))
        np.add.at(grad_y, seg + 1, dmu * frac)
    return total, grad_y


def _identity_heights(knots_x):
    return np.maximum(knots_x, 0.0)


def fit_calibration(preds_per_cell, counts_per_cell, n_knots: int = 10) -> MonotoneCalibration:
    """Fit the monotone transform maximizing summed per-cell information gain.

    Knot positions sit at rank-uniform quantiles of the pooled predictions.
    Heights are parameterized as cumulative sums of nonnegative increments,
    so monotonicity holds by construction, and optimized by bound-constrained
    quasi-Newton descent.  The result never scores below the identity map
    through the same knots; if the optimizer cannot beat it, the identity
    heights are returned.

    A constant pooled predictor gets the optimal constant transform (the mean
    of the per-cell mean counts) instead.
    """
    preds = [np.asarray(p, dtype=np.float64).ravel() for p in preds_per_cell]
    counts = [np.asarray(c, dtype=np.float64).ravel() for c in counts_per_cell]
    if not preds or len(preds) != len(counts):
        raise ValueError("need matching, nonempty per-cell prediction/count lists")
    for p, c in zip(preds, counts):
        if p.shape != c.shape or p.size == 0:
            raise ValueError("per-cell predictions and counts must align")
        if float(c.mean()) <= 0:
            raise ValueError("zero-rate cell")
    pooled = np.concatenate(preds)
    if not np.all(np.isfinite(pooled)):
        raise ValueError("degenerate pooled predictions: non-finite values")
    if n_knots < 2:
        raise ValueError("n_knots must be >= 2")

    if np.ptp(pooled) == 0.0:
        best_const = float(np.mean([c.mean() for c in counts]))
        v = float(pooled[0])
        return MonotoneCalibration(
            knots_x=np.array([v, v + 1.0]),
            knots_y=np.full(2, max(best_const, 0.0)),
        )

    knots_x = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, n_knots)))

    def objective(theta):
        value, grad_y = _gain_and_knot_gradient(preds, counts, knots_x, np.cumsum(theta))
        # increments accumulate the gradients of every knot at or above them
        return -value, -np.cumsum(grad_y[::-1])[::-1]

    theta0 = np.diff(_identity_heights(knots_x), prepend=0.0)
    identity_score = -objective(theta0)[0]
    res = scipy.optimize.minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * theta0.size,
        options={"maxiter": 200},
    )
    if np.all(np.isfinite(res.x)) and -res.fun > identity_score:
        heights = np.cumsum(np.maximum(res.x, 0.0))
    else:
        heights = _identity_heights(knots_x)
    return MonotoneCalibration(knots_x=knots_x, knots_y=heights)


# ---------------------------------------------------------------------------
# per-cell evaluation and reports

@dataclass
class CellMetrics:
    correlation: float
    auc: float
    info_gain_bits_per_bin: float
    marginal_entropy_bits_per_bin: float
    degenerate_correlation: bool = False
    degenerate_auc: bool = False


def rebin_factor(pred_rate_hz: float, eval_rate_hz: float) -> int:
    factor = pred_rate_hz / eval_rate_hz
    if abs(factor - round(factor)) > 1e-9 or factor < 1:
        raise ValueError(
            f"evaluation rate {eval_rate_hz}Hz must divide the prediction rate {pred_rate_hz}Hz"
        )
    return int(round(factor))


def evaluate(
    pred_rates,
    counts,
    eval_rate_hz: float,
    calib: MonotoneCalibration | None = None,
    pred_rate_hz: float = 100.0,
) -> CellMetrics:
    """Rebin predictions and counts to the evaluation rate, then score one cell.

    AUC is reported as NaN (with a flag) when every evaluation bin falls in
    one class, which happens for fast-firing cells at coarse rates.
    """
    factor = rebin_factor(pred_rate_hz, eval_rate_hz)
    pr = rebin_rates(pred_rates, factor)
    ct = rebin_counts(counts, factor)
    r, degenerate_r = _pearson(pr, ct)
    try:
        a = auc(pr, ct)
        degenerate_a = False
    except ValueError:
        a = float("nan")
        degenerate_a = True
    return CellMetrics(
        correlation=r,
        auc=a,
        info_gain_bits_per_bin=information_gain(pr, ct, calib),
        marginal_entropy_bits_per_bin=marginal_entropy(ct),
        degenerate_correlation=degenerate_r,
        degenerate_auc=degenerate_a,
    )


@dataclass
class MetricsReport:
    """Per-cell scores of one method on one dataset at one evaluation rate."""

    method: str
    dataset_id: str
    eval_rate_hz: float
    per_cell: list
    relative_info_gain: float
    calibration_knots: dict
    meta: dict = field(default_factory=dict)
    format_version: int = REPORT_FORMAT_VERSION

    def __post_init__(self):
        for row in self.per_cell:
            a = row.get("auc")
            if a is not None and not (0.0 <= a <= 1.0):
                raise ValueError(f"auc out of range: {a}")
            r = row.get("correlation")
            if r is not None and not (-1.0 - 1e-12 <= r <= 1.0 + 1e-12):
                raise ValueError(f"correlation out of range: {r}")
            if row.get("marginal_entropy_bits_per_bin", 0.0) < 0:
                raise ValueError("marginal entropy must be nonnegative")

    def mean(self, key: str) -> float:
        vals = [row[key] for row in self.per_cell if row.get(key) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def sem(self, key: str) -> float:
        """Plain standard error of the per-cell scores."""
        vals = [row[key] for row in self.per_cell if row.get(key) is not None]
        if len(vals) < 2:
            return float("nan")
        return float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def cell_row(cell_id: str, m: CellMetrics) -> dict:
    """Flatten one cell's metrics into a JSON/CSV-friendly row."""
    return {
        "cell_id": cell_id,
        "correlation": m.correlation,
        "info_gain_bits_per_bin": m.info_gain_bits_per_bin,
        "marginal_entropy_bits_per_bin": m.marginal_entropy_bits_per_bin,
        "auc": None if m.degenerate_auc else m.auc,
        "degenerate_correlation": m.degenerate_correlation,
        "degenerate_auc": m.degenerate_auc,
    }


def save_report(report: MetricsReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(asdict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def load_report(path) -> MetricsReport:
    path = Path(path)
    if not path.is_file():
        raise DataError("missing file", path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc}", path) from None
    version = doc.get("format_version")
    if version != REPORT_FORMAT_VERSION:
        raise DataError(f"unsupported report format_version {version!r}", path)
    try:
        return MetricsReport(**doc)
    except (TypeError, ValueError) as exc:
        raise DataError(f"malformed report: {exc}", path) from None


def report_to_csv(report: MetricsReport, path) -> Path:
    """Write the per-cell rows as a flat CSV for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = [
        "dataset_id",
        "method",
        "eval_rate_hz",
        "cell_id",
        "correlation",
        "info_gain_bits_per_bin",
        "marginal_entropy_bits_per_bin",
        "auc",
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in report.per_cell:
            out = {
                "dataset_id": report.dataset_id,
                "method": report.method,
                "eval_rate_hz": report.eval_rate_hz,
            }
            out.update({k: row.get(k) for k in fields[3:]})
            writer.writerow(out)
    return path
