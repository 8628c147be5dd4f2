"""Maximum-likelihood training via limited-memory quasi-Newton descent.

``minimize`` is a self-contained L-BFGS: two-loop recursion over a bounded
history of curvature pairs, strong Wolfe line search (c1=1e-4, c2=0.9) with
bisection zoom, and step halving toward the last good point when an
evaluation turns non-finite.  Everything is deterministic, so a fixed seed
reproduces the trained model bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericalError
from .features import FeatureMatrix, PcaBasis
from .models import (
    MODEL_KINDS,
    LnpParams,
    MlnnParams,
    ModelEnsemble,
    StmParams,
    loglik_and_gradient,
    params_to_vector,
    vector_to_params,
    weight_mask,
)

WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
MAX_HALVINGS = 30
REL_F_TOL = 1e-10


@dataclass
class TrainConfig:
    """Knobs for ensemble training; serializes to/from plain JSON dicts."""

    kind: str = "stm"
    n_members: int = 4
    max_iters: int = 1000
    grad_tol: float = 1e-6
    lbfgs_memory: int = 10
    init_scale: float = 0.1
    seed: int = 0
    n_components: int = 3
    n_quadratic: int = 2
    hidden_sizes: tuple = (10, 5)
    ridge: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")
        if self.grad_tol <= 0 or self.init_scale < 0 or self.ridge < 0:
            raise ValueError("tolerances and scales must be positive")
        if self.lbfgs_memory < 1 or self.max_iters < 1:
            raise ValueError("lbfgs_memory and max_iters must be >= 1")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iters: int
    status: str
    history: list = field(default_factory=list)


@dataclass
class TrainOutcome:
    ensemble: ModelEnsemble
    member_histories: list
    member_statuses: list


def _two_loop(g, pairs):
    """L-BFGS two-loop recursion with standard initial Hessian scaling."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s_last, y_last, _ = pairs[-1]
    q *= (s_last @ y_last) / (y_last @ y_last)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _wolfe_line_search(phi, f0, dphi0, alpha_init):
    """Bracket then zoom for a strong Wolfe point along a descent direction.

    ``phi(alpha)`` returns ``(f, g, dphi)``; non-finite trials are retried at
    steps halved toward the last finite point, up to MAX_HALVINGS, after
    which a NumericalError aborts the member.  Returns ``(alpha, f, g)`` or
    None when no decrease is attainable.
    """

    def safe_eval(alpha_good, alpha_try):
        for _ in range(MAX_HALVINGS):
            f, g, dg = phi(alpha_try)
            if np.isfinite(f) and np.all(np.isfinite(g)):
                return alpha_try, f, g, dg
            alpha_try = alpha_good + 0.5 * (alpha_try - alpha_good)
        raise NumericalError(
            f"objective stayed non-finite after {MAX_HALVINGS} step halvings "
            f"(last step {alpha_try:.3e})"
        )

    def zoom(a_lo, f_lo, g_lo, a_hi, f_hi):
        for _ in range(40):
            if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
                break
            a, fa, ga, da = safe_eval(a_lo, 0.5 * (a_lo + a_hi))
            if fa > f0 + WOLFE_C1 * a * dphi0 or fa >= f_lo:
                a_hi, f_hi = a, fa
            else:
                if abs(da) <= -WOLFE_C2 * dphi0:
                    return a, fa, ga
                if da * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, g_lo = a, fa, ga
        # fall back to the best sufficient-decrease point found
        if f_lo < f0:
            return a_lo, f_lo, g_lo
        return None

    a_prev, f_prev, g_prev = 0.0, f0, None
    alpha = alpha_init
    for i in range(20):
        alpha, fa, ga, da = safe_eval(a_prev, alpha)
        if fa > f0 + WOLFE_C1 * alpha * dphi0 or (i > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, g_prev, alpha, fa)
        if abs(da) <= -WOLFE_C2 * dphi0:
            return alpha, fa, ga
        if da >= 0:
            return zoom(alpha, fa, ga, a_prev, f_prev)
        a_prev, f_prev, g_prev = alpha, fa, ga
        alpha *= 2.0
    if f_prev < f0 and g_prev is not None:
        return a_prev, f_prev, g_prev
    return None


def minimize(objective, x0, cfg: TrainConfig) -> OptimResult:
    """Locally minimize ``objective(x) -> (value, gradient)`` from ``x0``.

    Stops when the gradient sup-norm drops below ``cfg.grad_tol``, the
    relative objective decrease falls below 1e-10, or ``cfg.max_iters`` is
    reached.  The objective value is nonincreasing over accepted steps.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = objective(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("objective must be finite at the initial point")
    history = [float(f)]
    pairs = []
    status = "max_iters"
    n_iters = 0

    for _ in range(cfg.max_iters):
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm < cfg.grad_tol:
            status = "converged_grad_tol"
            break
        n_iters += 1

        d = _two_loop(g, pairs) if pairs else g.copy()
        d = -d
        dphi0 = float(d @ g)
        if not np.isfinite(dphi0) or dphi0 >= 0:
            pairs.clear()
            d = -g
            dphi0 = float(d @ g)
        alpha_init = 1.0 if pairs else min(1.0, 1.0 / max(grad_norm, 1e-12))

        def make_phi(direction):
            def phi(alpha):
                fx, gx = objective(x + alpha * direction)
                dg = float(gx @ direction) if np.all(np.isfinite(gx)) else np.nan
                return fx, gx, dg

            return phi

        result = _wolfe_line_search(make_phi(d), f, dphi0, alpha_init)
        if result is None and pairs:
            # retry once along steepest descent with fresh memory
            pairs.clear()
            d = -g
            dphi0 = float(d @ g)
            alpha_init = min(1.0, 1.0 / max(grad_norm, 1e-12))
            result = _wolfe_line_search(make_phi(d), f, dphi0, alpha_init)
        if result is None:
            status = "line_search_failed"
            break

        alpha, f_new, g_new = result
        if f_new > f:
            raise NumericalError("line search returned an ascent step")
        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > cfg.lbfgs_memory:
                pairs.pop(0)
        x = x + s
        rel_decrease = (f - f_new) / max(1.0, abs(f))
        f, g = f_new, g_new
        history.append(float(f))
        if rel_decrease < REL_F_TOL:
            status = "converged_f_tol"
            break

    return OptimResult(
        x=x,
        fun=float(f),
        grad_norm=float(np.max(np.abs(g))),
        n_iters=n_iters,
        status=status,
        history=history,
    )


def random_init(cfg: TrainConfig, feature_dim: int, mean_count: float, seed: int):
    """Gaussian filters/weights, offsets matched to the empirical mean count."""
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    rng = np.random.default_rng(seed)
    scale = cfg.init_scale
    if cfg.kind == "stm":
        k, m = cfg.n_components, cfg.n_quadratic
        return StmParams(
            w=rng.normal(0.0, scale, (k, feature_dim)),
            u=rng.normal(0.0, scale, (m, feature_dim)),
            beta=rng.normal(0.0, scale, (k, m)),
            b=np.full(k, np.log(mean_count / k + 1e-6)),
        )
    if cfg.kind == "lnp":
        return LnpParams(
            w=rng.normal(0.0, scale, feature_dim),
            b=float(np.log(mean_count + 1e-6)),
        )
    h1, h2 = cfg.hidden_sizes
    return MlnnParams(
        W1=rng.normal(0.0, scale, (h1, feature_dim)),
        b1=np.zeros(h1),
        W2=rng.normal(0.0, scale, (h2, h1)),
        b2=np.zeros(h2),
        w3=rng.normal(0.0, scale, h2),
        b3=float(np.log(mean_count + 1e-6)),
    )


def _make_objective(template, X, counts, ridge):
    from scipy.special import gammaln

    mask = weight_mask(template) if ridge > 0 else None
    log_factorial_mean = float(np.mean(gammaln(np.asarray(counts, dtype=np.float64) + 1.0)))

    def objective(vec):
        p = vector_to_params(vec, template)
        value, grad = loglik_and_gradient(p, X, counts, log_factorial_mean)
        f = -value
        g = -params_to_vector(grad)
        if ridge > 0:
            f += 0.5 * ridge * float(np.sum((vec * mask) ** 2))
            g += ridge * vec * mask
        return f, g

    return objective


def train(
    features: FeatureMatrix,
    counts,
    cfg: TrainConfig,
    pca_basis: PcaBasis,
    preprocessing: str = "gsm-detrend+percentile-normalize",
) -> TrainOutcome:
    """Train ``cfg.n_members`` independently initialized members and bundle them.

    Member ``i`` uses seed ``cfg.seed + i``.  Members whose optimization
    aborts on numerical failure are dropped; if every member fails the
    collected diagnostics are raised.
    """
    X = features.data
    counts = np.asarray(counts, dtype=np.int64).ravel()
    if counts.size != X.shape[0]:
        raise ValueError("counts must align with feature rows")
    if not np.any(counts > 0):
        raise ValueError("training counts are all zero")
    mean_count = float(counts.mean())

    members = []
    histories = []
    statuses = []
    failures = []
    for i in range(cfg.n_members):
        init = random_init(cfg, X.shape[1], mean_count, cfg.seed + i)
        objective = _make_objective(init, X, counts, cfg.ridge)
        try:
            res = minimize(objective, params_to_vector(init), cfg)
        except NumericalError as exc:
            failures.append(f"member {i}: {exc}")
            continue
        members.append(vector_to_params(res.x, init))
        histories.append(res.history)
        statuses.append(res.status)
    if not members:
        raise NumericalError("all ensemble members failed: " + "; ".join(failures))

    ensemble = ModelEnsemble(
        kind=cfg.kind,
        members=members,
        pca_basis=pca_basis,
        preprocessing=preprocessing,
        bin_rate_hz=features.bin_rate_hz,
        window_ms=features.window_ms,
        train_config=cfg.to_dict(),
    )
    return TrainOutcome(ensemble=ensemble, member_histories=histories, member_statuses=statuses)
