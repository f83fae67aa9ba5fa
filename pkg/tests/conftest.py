import numpy as np
import pytest

from qcsmooth.potential import PotentialModel
from qcsmooth.quantum import build_hamiltonian, eigendecompose
from qcsmooth.weyl import build_grid


@pytest.fixture(scope="session")
def harmonic():
    return PotentialModel("harmonic", 1.0)


@pytest.fixture(scope="session")
def bracket_half():
    return PotentialModel("bracket_power", 0.5)


@pytest.fixture(scope="session")
def small_system(harmonic):
    """Harmonic oscillator on n=128, L=12."""
    grid = build_grid(1, 128, 12.0)
    return harmonic, grid, eigendecompose(build_hamiltonian(harmonic, grid))


@pytest.fixture(scope="session")
def default_system(harmonic):
    """Harmonic oscillator on the default n=512, L=24 grid."""
    grid = build_grid(1, 512, 24.0)
    return harmonic, grid, eigendecompose(build_hamiltonian(harmonic, grid))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
