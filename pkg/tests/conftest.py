import numpy as np
import pytest

import basketsim as bs


@pytest.fixture(scope="session")
def fast_mcmc():
    return bs.McmcSettings(burn_in=400, samples=800)


@pytest.fixture(scope="session")
def design_fast(fast_mcmc):
    return bs.paper_design_4plus1(mcmc=fast_mcmc)


@pytest.fixture(scope="session")
def design_2plus2_fast(fast_mcmc):
    return bs.paper_design_2plus2(mcmc=fast_mcmc)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
