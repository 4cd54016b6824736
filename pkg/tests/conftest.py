import numpy as np
import pytest

from rnnm_harness import gen_gaussian_ensemble
from rnnm_linalg import MeasurementEnsemble


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def coordinate_ensemble():
    return MeasurementEnsemble.coordinate(5, 5)


@pytest.fixture
def gaussian_ensemble():
    return gen_gaussian_ensemble(20, 5, 5, seed=7)


@pytest.fixture
def rank_one(rng):
    u = rng.standard_normal(5)
    v = rng.standard_normal(5)
    X = np.outer(u, v)
    return X / np.linalg.norm(X)
