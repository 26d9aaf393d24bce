"""Shared fixtures: small federations that run in well under a second per round."""

import numpy as np
import pytest

from analysis.client_models import ClientRole, ClientState, HyperParams
from analysis.rng import RngStream
from analysis.simulation import generate_federation, train_reference
from core.settings_manager import ExperimentConfig


@pytest.fixture
def make_client():
    def factory(client_id=0, role=ClientRole.BENIGN, n_samples=10, **kwargs):
        return ClientState(client_id, role, n_samples, **kwargs)
    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_hp():
    return HyperParams(rounds=4, cohort_size=5, local_epochs=1, learning_rate=0.1, batch_size=16, seed=7)


@pytest.fixture
def small_config(small_hp, tmp_path):
    return ExperimentConfig(hp=small_hp, n_clients=10, samples_per_client=40, feature_dim=10,
                            test_samples=200, output_dir=str(tmp_path / "results"))


@pytest.fixture
def small_task(small_config):
    task = generate_federation(small_config.n_clients, small_config.samples_per_client,
                               small_config.dirichlet_alpha, small_config.feature_dim,
                               RngStream(small_config.hp.seed), test_samples=small_config.test_samples)
    train_reference(task, small_config.hp.weight_decay)
    return task
