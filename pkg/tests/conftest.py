import numpy as np
import pytest

from grushin_mfg.coupling import make_coupling
from grushin_mfg.grid import TorusGrid
from grushin_mfg.mfg import default_m0, solve_mfg


@pytest.fixture(scope="session")
def g8():
    return TorusGrid(8, 8)


@pytest.fixture(scope="session")
def g16():
    return TorusGrid(16, 16)


@pytest.fixture(scope="session")
def base8(g8):
    c = make_coupling(g8)
    return solve_mfg(0.0, default_m0(g8), c, tol=1e-11, nt=32)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
