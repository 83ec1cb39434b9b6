import numpy as np
import pytest

from moodsense import simulator


@pytest.fixture(scope="session")
def small_cohort():
    """Shared 8-day default-process cohort; kept small so tests stay quick."""
    cfg = simulator.CohortConfig(seed=42, days=8, n_participants=6)
    return simulator.generate_cohort(cfg)


@pytest.fixture(scope="session")
def small_rows(small_cohort):
    return small_cohort.to_feature_rows()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
