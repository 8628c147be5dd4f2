"""Quasi-Newton optimizer and ensemble training."""

import numpy as np
import pytest

from spikeforge.errors import NumericalError
from spikeforge.features import FeatureMatrix, PcaBasis
from spikeforge.models import (
    LnpParams,
    params_to_vector,
    poisson_log_likelihood,
    rate,
    sample_spike_train,
    save_ensemble,
)
from spikeforge.trainer import TrainConfig, minimize, random_init, train


def quick_cfg(**kw):
    defaults = dict(kind="lnp", n_members=1, max_iters=200, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


def simple_basis(dim):
    return PcaBasis(
        mean=np.zeros(dim),
        components=np.eye(dim),
        explained_variance=np.ones(dim),
        variance_fraction_kept=1.0,
    )


class TestMinimize:
    def test_convex_quadratic(self):
        rng = np.random.default_rng(0)
        center = rng.normal(size=8)

        def objective(x):
            d = x - center
            return float(d @ d), 2 * d

        res = minimize(objective, rng.normal(size=8), quick_cfg(max_iters=50))
        assert res.n_iters <= 50
        np.testing.assert_allclose(res.x, center, atol=1e-8)

    def test_rosenbrock(self):
        def objective(v):
            x, y = v
            f = (1 - x) ** 2 + 100 * (y - x**2) ** 2
            g = np.array([-2 * (1 - x) - 400 * x * (y - x**2), 200 * (y - x**2)])
            return float(f), g

        res = minimize(objective, np.array([-1.2, 1.0]), quick_cfg(max_iters=1000, grad_tol=1e-9))
        assert res.fun < 1e-8
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-3)

    def test_history_nonincreasing(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(10, 10))
        A = A @ A.T + np.eye(10)

        def objective(x):
            return float(0.5 * x @ A @ x), A @ x

        res = minimize(objective, rng.normal(size=10), quick_cfg())
        assert np.all(np.diff(res.history) <= 0)

    def test_non_finite_at_init_rejected(self):
        def objective(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(ValueError, match="finite at the initial point"):
            minimize(objective, np.zeros(3), quick_cfg())

    def test_step_halving_recovers_from_barrier(self):
        # objective blows up for x < 0.5 but the solution is at x = 1
        def objective(v):
            x = v[0]
            if x < 0.5:
                return float("inf"), np.array([np.nan])
            return float((x - 1.0) ** 2), np.array([2 * (x - 1.0)])

        res = minimize(objective, np.array([5.0]), quick_cfg(max_iters=100))
        assert res.x[0] == pytest.approx(1.0, abs=1e-6)

    def test_abort_after_persistent_non_finite(self):
        calls = {"n": 0}

        def objective(x):
            calls["n"] += 1
            if calls["n"] == 1:
                return float(x @ x + 1.0), 2 * x
            return float("nan"), np.full_like(x, np.nan)

        with pytest.raises(NumericalError, match="halvings"):
            minimize(objective, np.ones(2), quick_cfg())


class TestRandomInit:
    def test_deterministic_and_distinct(self):
        cfg = quick_cfg(kind="stm")
        a = random_init(cfg, 7, 0.5, seed=3)
        b = random_init(cfg, 7, 0.5, seed=3)
        c = random_init(cfg, 7, 0.5, seed=4)
        np.testing.assert_array_equal(params_to_vector(a), params_to_vector(b))
        assert np.any(params_to_vector(a) != params_to_vector(c))

    def test_stm_offsets_reproduce_mean_with_zero_filters(self):
        cfg = quick_cfg(kind="stm", init_scale=0.0)
        mean_count = 0.37
        p = random_init(cfg, 5, mean_count, seed=0)
        # with zero filters the mixture collapses to sum_k exp(b_k)
        expected = cfg.n_components * (mean_count / cfg.n_components + 1e-6)
        assert rate(p, np.zeros(5)) == pytest.approx(expected, abs=1e-9)

    def test_lnp_offset_reproduces_mean_with_zero_weights(self):
        cfg = quick_cfg(kind="lnp", init_scale=0.0)
        p = random_init(cfg, 5, 0.8, seed=0)
        assert rate(p, np.zeros(5)) == pytest.approx(0.8 + 1e-6, abs=1e-9)

    def test_mlnn_shapes(self):
        cfg = quick_cfg(kind="mlnn", hidden_sizes=(6, 4))
        p = random_init(cfg, 9, 1.0, seed=0)
        assert p.W1.shape == (6, 9)
        assert p.W2.shape == (4, 6)
        assert p.w3.shape == (4,)


def make_lnp_data(n, d, seed, true_w=None, b=-1.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    w = true_w if true_w is not None else rng.normal(0, 0.4, d)
    rates = np.exp(np.clip(X @ w + b, -30, 30))
    counts = sample_spike_train(rates, seed=seed + 1)
    return X, w, counts


class TestTrain:
    def test_lnp_converges_to_small_gradient(self):
        X, _, counts = make_lnp_data(5000, 6, seed=10)
        feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=60.0)
        cfg = quick_cfg(max_iters=500, grad_tol=1e-6)
        outcome = train(feats, counts, cfg, simple_basis(6))
        member = outcome.ensemble.members[0]
        from spikeforge.models import gradient, params_to_vector as p2v

        g = p2v(gradient(member, X, counts))
        assert np.max(np.abs(g)) < 1e-6

    def test_filter_recovery_on_generated_data(self):
        X, true_w, counts = make_lnp_data(50_000, 8, seed=11)
        feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=80.0)
        outcome = train(feats, counts, quick_cfg(max_iters=400), simple_basis(8))
        fitted = outcome.ensemble.members[0].w
        cosine = fitted @ true_w / (np.linalg.norm(fitted) * np.linalg.norm(true_w))
        assert cosine > 0.95

    def test_trained_beats_constant_rate_model(self):
        X, _, counts = make_lnp_data(3000, 5, seed=12)
        feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=50.0)
        for kind in ("stm", "lnp", "mlnn"):
            cfg = quick_cfg(kind=kind, max_iters=150, n_members=2, seed=5)
            outcome = train(feats, counts, cfg, simple_basis(5))
            const_ll = poisson_log_likelihood(
                np.full(counts.size, counts.mean()), counts
            )
            for member in outcome.ensemble.members:
                assert poisson_log_likelihood(rate(member, X), counts) >= const_ll

    def test_member_histories_nonincreasing(self):
        X, _, counts = make_lnp_data(2000, 4, seed=13)
        feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=40.0)
        outcome = train(feats, counts, quick_cfg(kind="stm", n_members=2), simple_basis(4))
        for history in outcome.member_histories:
            assert np.all(np.diff(history) <= 0)

    def test_seed_determinism_bitwise(self, tmp_path):
        X, _, counts = make_lnp_data(1500, 4, seed=14)
        feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=40.0)
        paths = []
        for run in range(2):
            cfg = quick_cfg(kind="stm", n_members=2, seed=99)
            outcome = train(feats, counts, cfg, simple_basis(4))
            path = tmp_path / f"model_{run}.json"
            save_ensemble(outcome.ensemble, path)
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_all_zero_counts_rejected(self):
        feats = FeatureMatrix(data=np.zeros((20, 3)), bin_rate_hz=100.0, window_ms=30.0)
        with pytest.raises(ValueError, match="all zero"):
            train(feats, np.zeros(20, dtype=int), quick_cfg(), simple_basis(3))

    def test_ridge_shrinks_weights(self):
        X, _, counts = make_lnp_data(2000, 6, seed=15)
        feats = FeatureMatrix(data=X, bin_rate_hz=100.0, window_ms=60.0)
        plain = train(feats, counts, quick_cfg(seed=1), simple_basis(6))
        ridged = train(feats, counts, quick_cfg(seed=1, ridge=10.0), simple_basis(6))
        assert (
            np.linalg.norm(ridged.ensemble.members[0].w)
            < np.linalg.norm(plain.ensemble.members[0].w)
        )


class TestTrainConfig:
    def test_round_trip(self):
        cfg = TrainConfig(kind="mlnn", hidden_sizes=(7, 3), seed=2)
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown TrainConfig keys"):
            TrainConfig.from_dict({"kind": "lnp", "typo": 1})

    def test_invalid_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown model kind"):
            TrainConfig(kind="svm")
