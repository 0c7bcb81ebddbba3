"""Shared fixtures: benchmark models and small fixed-seed datasets."""

import pytest

from unbiasedpf import generate_data, make_benchmark


@pytest.fixture(scope="session")
def ou():
    return make_benchmark("OU")


@pytest.fixture(scope="session")
def nld():
    return make_benchmark("NLD")


@pytest.fixture(scope="session")
def gbm():
    return make_benchmark("GBM")


@pytest.fixture(scope="session")
def langevin():
    return make_benchmark("Langevin")


@pytest.fixture(scope="session")
def ou_data(ou):
    """Five OU observations from the exact transition law, seed 11."""
    return generate_data(ou, 5, level="exact", seed=11)


@pytest.fixture(scope="session")
def ou_data_n3(ou):
    """Three OU observations, the small workload for filter-level tests."""
    return generate_data(ou, 3, level="exact", seed=5)


@pytest.fixture(scope="session")
def nld_data(nld):
    """Five observations from the nonlinear diffusion at generation level 9."""
    return generate_data(nld, 5, level=9, seed=17)
