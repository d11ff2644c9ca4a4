import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / 'src'))

from gpd import GpdParams, gpd_sample  # noqa: E402
from streams import make_rng  # noqa: E402


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def gpd_exceedances():
    """500 draws from GPD(0.2, 8) above u = 20."""
    return gpd_sample(500, GpdParams(0.2, 8.0, 20.0), make_rng(2024))


@pytest.fixture
def fast_mcmc():
    from mcmc import McmcConfig
    return McmcConfig(n_keep=1000, n_burn=300, seed=7)
