import numpy as np
import pytest

from hfa import LatticeBox, PotentialField, build_hamiltonian, interaction_kernel_nnn


def random_symmetric(n, seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


def random_projector(n, rank, seed):
    _, vecs = np.linalg.eigh(random_symmetric(n, seed))
    occ = vecs[:, :rank]
    return occ @ occ.T


def chain_model(length, xi, w, q, seed):
    """Sampled 1d model: (box, potential, kernel, linear hamiltonian)."""
    box = LatticeBox((length,))
    pot = PotentialField.sample(box, xi, w, seed)
    kernel = interaction_kernel_nnn(q)
    return box, pot, kernel, build_hamiltonian(box, pot)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20240917))
