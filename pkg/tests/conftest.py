"""Shared fixtures: desk-scale spatial dataset and the priors fitted on it.

The fitted priors are expensive (about a minute each), so they are built once per
session and reused by the GMM, VAE and acceptance tests.
"""

import numpy as np
import pytest

from semiblind.channels import SpatialModelParams, generate_dataset
from semiblind.gmm import fit_gmm
from semiblind.vae import VaeConfig, train_vae

DESK_M = 64
DESK_J = 8
DESK_TRAIN = 20_000
DESK_K = 32
DESK_GMM_ITERS = 30
DESK_VAE_EPOCHS = 12

_ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def spatial_params():
    return SpatialModelParams(DESK_M)


@pytest.fixture(scope="session")
def spatial_train(spatial_params):
    return generate_dataset("spatial", DESK_M, DESK_TRAIN, np.random.default_rng(2024), params=spatial_params)


@pytest.fixture(scope="session")
def gmm_desk(spatial_train):
    return fit_gmm(spatial_train, DESK_K, max_iter=DESK_GMM_ITERS, tol=1e-6, rng=np.random.default_rng(7))


@pytest.fixture(scope="session")
def vae_desk(spatial_train):
    cfg = VaeConfig(epochs=DESK_VAE_EPOCHS, num_users=DESK_J)
    return train_vae(spatial_train, cfg, np.random.default_rng(11))


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
