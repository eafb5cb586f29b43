"""
Shared fixtures for the Dispel test suite
"""

import numpy as np
import pytest

from models.dataset import Dataset, ModelWeights
from models.schemas import DistSpec, GroupUniverse


@pytest.fixture
def small_spec():
    """Spurious family at modest size: mu=0.9, sigma1=0.5, d=8"""
    return DistSpec(mu=0.9, sigma1=0.5, sigma2=0.0, sigma_xi=2.0, d=8)


@pytest.fixture
def nospu_spec():
    return DistSpec(mu=0.5, sigma1=0.5, sigma2=0.0, sigma_xi=1.0, d=4, spurious_mode="absent")


@pytest.fixture
def four_group_data():
    """8 rows, two per (a, y) group, on the diagonal x = (y, a)"""
    rows = [(1, 1), (1, 1), (-1, -1), (-1, -1), (-1, 1), (-1, 1), (1, -1), (1, -1)]
    a = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    X = np.stack([y, a, np.zeros(8)], axis=1).astype(np.float64)
    return Dataset(X=X, y=y, a=a)


@pytest.fixture
def core_weights():
    """Predicts from the core coordinate only"""
    return ModelWeights(w=np.array([1.0, 0.0, 0.0]), b=0.0)


@pytest.fixture
def synthetic_universe():
    return GroupUniverse(groups=[(1, 1), (-1, -1), (-1, 1), (1, -1)])


@pytest.fixture
def planted_pool():
    """Small {0,1}-labelled embedding pool with every group present"""
    rng = np.random.default_rng(3)
    n = 400
    y = rng.integers(0, 2, n)
    a = np.where(rng.random(n) < 0.8, y, 1 - y)
    X = np.column_stack([
        (2 * y - 1) + 0.5 * rng.standard_normal(n),
        (2 * a - 1) + 0.1 * rng.standard_normal(n),
        rng.standard_normal((n, 4)),
    ])
    return Dataset(X=X, y=y, a=a)


@pytest.fixture
def out_dir(tmp_path):
    d = tmp_path / "out"
    d.mkdir()
    return d
