"""Shared pytest fixtures for iCARH tests."""

import numpy as np
import pytest

from icarh.simulator import SimulationConfig, simulate_replicates

from tests.fixtures.synthetic import make_problem


@pytest.fixture
def rng():
    """Provide a seeded random generator."""
    return np.random.default_rng(20240601)


@pytest.fixture
def small_problem():
    """Provide (data, graph, design) with N=4, T=3, M=6, K=2, P=3."""
    return make_problem()


@pytest.fixture
def tiny_simulation_config():
    """Provide a simulation config small enough for end-to-end CLI runs."""
    return SimulationConfig(n_subjects=6, n_times=3, n_metabolites=5, n_covariates=1, n_pathways=2,
                            tau=1.2, seed=11, density={1: 0.5, 2: 0.5})


@pytest.fixture
def tiny_replicate(tiny_simulation_config):
    """Provide one simulated replicate from the tiny config."""
    return simulate_replicates(tiny_simulation_config, n=1)[0]
