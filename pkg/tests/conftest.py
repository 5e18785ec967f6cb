import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bipsdmrg.hamio import build_hubbard, dimerized_hubbard

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def hubbard6():
    return build_hubbard(6, [1.0] * 5, 4.0)


@pytest.fixture(scope="session")
def dimer8():
    """8-site dimerized chain, t_intra = 1, t_inter = 0.1, U = 4."""
    return dimerized_hubbard(8, 1.0, 0.1, 4.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_integrals(k, rng, n_elec=None, two_sz=None, scale=0.3):
    """Real integrals with the full eightfold permutational symmetry."""
    from bipsdmrg.hamio import Integrals

    h = rng.standard_normal((k, k))
    h = 0.5 * (h + h.T)
    a = rng.standard_normal((k * k, k * k)) * scale
    m = a @ a.T / (k * k)            # positive semidefinite like a Coulomb metric
    v = m.reshape(k, k, k, k)
    v = v + v.transpose(1, 0, 2, 3)
    v = v + v.transpose(0, 1, 3, 2)
    v = 0.25 * v
    n_elec = k if n_elec is None else n_elec
    return Integrals(h, v, 0.0, n_elec, n_elec % 2 if two_sz is None else two_sz)
