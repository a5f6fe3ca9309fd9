import numpy as np
import pytest

from stochgrad_pde.mesh_fem import build_mesh
from stochgrad_pde.oracle import make_problem
from stochgrad_pde.pde_solver import SemilinearModel
from stochgrad_pde.rand_field import build_kl_spec, draw_samples


@pytest.fixture(scope="session")
def kl():
    return build_kl_spec(20, 0.5, 1.0)


@pytest.fixture(scope="session")
def mesh4():
    return build_mesh(4)


@pytest.fixture(scope="session")
def model4(kl, mesh4):
    return SemilinearModel(mesh4, kl)


@pytest.fixture(scope="session")
def model10(kl):
    return SemilinearModel(build_mesh(10), kl)


@pytest.fixture(scope="session")
def problem6():
    return make_problem(6, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def samples(kl):
    return draw_samples(np.random.default_rng(7), kl, 20)
