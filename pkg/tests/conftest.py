import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from promp.basis import BasisConfig
from promp.model import ProMP

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_promp(K_rbf=3, D=2, seed=0, noise=0.1, rank=None, poly_degree=1):
    rng = np.random.default_rng(seed)
    basis = BasisConfig.default(K_rbf, poly_degree)
    KD = basis.K * D
    A = rng.standard_normal((KD, rank or KD)) / np.sqrt(KD)
    Sw = A @ A.T + (1e-2 * np.eye(KD) if rank is None else 0.0)
    B = rng.standard_normal((D, D))
    Sy = noise ** 2 * (B @ B.T / D + np.eye(D))
    return ProMP(rng.standard_normal(KD), Sw, Sy, basis, D)


@pytest.fixture
def promp_small():
    return random_promp()
