"""Shared fixtures: small synthetic datasets and fast training configs."""

import pytest

from spikeforge.synth import SynthConfig, generate_dataset

FAST_TRAIN = {"n_members": 1, "max_iters": 80, "grad_tol": 1e-5}


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Five 20-second cells with moderate firing rates."""
    root = tmp_path_factory.mktemp("data") / "tiny"
    cfg = SynthConfig(n_cells=5, duration_s=20.0, rate_max_hz=25.0, seed=101)
    generate_dataset(cfg, root, dataset_id="tiny")
    return root


@pytest.fixture(scope="session")
def tiny_dataset_pair(tmp_path_factory):
    """Two small datasets with different calcium decay constants."""
    root = tmp_path_factory.mktemp("data")
    a = root / "set_a"
    b = root / "set_b"
    generate_dataset(
        SynthConfig(n_cells=3, duration_s=15.0, rate_max_hz=25.0, gamma=0.98, seed=201),
        a,
        dataset_id="set_a",
    )
    generate_dataset(
        SynthConfig(n_cells=3, duration_s=15.0, rate_max_hz=25.0, gamma=0.9, seed=202),
        b,
        dataset_id="set_b",
    )
    return a, b
