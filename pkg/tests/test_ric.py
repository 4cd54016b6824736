import itertools
import json

import numpy as np
import pytest

from rnnm_errors import DomainError, SizeError
from rnnm_harness import gen_low_rank
from rnnm_linalg import MeasurementEnsemble, apply_map
from rnnm_ric import (
    EXACT,
    MC_ASCENT,
    MONTE_CARLO,
    RicEstimate,
    _sample_quotients,
    ascent_refine_ric,
    exact_sparse_ric,
    mc_ascent_ric,
    mc_matrix_ric,
    ric_gate,
    ric_order,
)


def brute_force_ric(A, k):
    worst = 0.0
    for S in itertools.combinations(range(A.shape[1]), k):
        s = np.linalg.svd(A[:, S], compute_uv=False)
        worst = max(worst, s[0] ** 2 - 1.0, 1.0 - s[-1] ** 2)
    return worst


def test_exact_ric_known_values():
    assert exact_sparse_ric(np.eye(6), 3).value == pytest.approx(0.0, abs=1e-15)
    estimate = exact_sparse_ric(np.diag([1.0, np.sqrt(0.8)]), 1)
    assert estimate.value == pytest.approx(0.2, abs=1e-12)
    assert estimate.is_exact and estimate.method == EXACT


def test_exact_ric_matches_brute_force():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(3, 9))
        m = int(rng.integers(3, 9))
        k = int(rng.integers(1, min(3, n) + 1))
        A = rng.standard_normal((m, n)) / np.sqrt(m)
        assert exact_sparse_ric(A, k).value == pytest.approx(brute_force_ric(A, k), abs=1e-10)


def test_exact_ric_limits():
    with pytest.raises(DomainError):
        exact_sparse_ric(np.eye(3), 4)
    with pytest.raises(SizeError):
        exact_sparse_ric(np.eye(21), 2)


@pytest.mark.parametrize('k', range(1, 6))
def test_mc_ric_on_isometry(coordinate_ensemble, k):
    estimate = mc_matrix_ric(coordinate_ensemble, k, samples=300, seed=1)
    assert estimate.value <= 1e-10
    assert estimate.is_lower_bound and estimate.method == MONTE_CARLO


def test_mc_ric_on_scaled_isometry(coordinate_ensemble):
    estimate = mc_matrix_ric(coordinate_ensemble.scaled(np.sqrt(1.2)), 2, samples=200, seed=2)
    assert estimate.value == pytest.approx(0.2, abs=1e-9)


def test_mc_ric_single_measurement_approaches_one(rng):
    A = rng.standard_normal((5, 5))
    ens = MeasurementEnsemble((A / np.linalg.norm(A))[None])
    estimate = mc_matrix_ric(ens, 1, samples=2000, seed=5)
    assert 0.999 <= estimate.value <= 1.0 + 1e-12


@pytest.mark.parametrize('c', [0.5, np.sqrt(1.2), 3.0])
def test_sampled_quotients_scale_with_the_map(gaussian_ensemble, c):
    base = _sample_quotients(gaussian_ensemble, 2, 50, seed=6)
    scaled = _sample_quotients(gaussian_ensemble.scaled(c), 2, 50, seed=6)
    np.testing.assert_allclose(scaled, c * c * base, rtol=1e-12)


def test_mc_ric_is_nested(gaussian_ensemble):
    few = mc_matrix_ric(gaussian_ensemble, 1, samples=100, seed=3)
    more = mc_matrix_ric(gaussian_ensemble, 1, samples=200, seed=3)
    higher = mc_matrix_ric(gaussian_ensemble, 2, samples=100, seed=3)
    assert more.value >= few.value
    assert higher.value >= few.value


def test_mc_ric_validation(gaussian_ensemble):
    with pytest.raises(DomainError):
        mc_matrix_ric(gaussian_ensemble, 6, samples=10)
    with pytest.raises(DomainError):
        mc_matrix_ric(gaussian_ensemble, 1, samples=0)


def test_ascent_never_lowers_the_bound(gaussian_ensemble, rank_one):
    y = apply_map(gaussian_ensemble, rank_one)
    refined = ascent_refine_ric(gaussian_ensemble, 1, rank_one, steps=50)
    assert refined.value >= abs(float(y @ y) - 1.0)
    assert refined.method == MC_ASCENT


@pytest.mark.parametrize('seed', range(5))
@pytest.mark.parametrize('k', [1, 2])
def test_ascent_on_isometries(coordinate_ensemble, seed, k):
    init = gen_low_rank(5, 5, k, seed=seed)
    assert ascent_refine_ric(coordinate_ensemble, k, init).value <= 1e-12
    scaled = ascent_refine_ric(coordinate_ensemble.scaled(np.sqrt(1.2)), k, init)
    assert scaled.value == pytest.approx(0.2, abs=1e-9)


def test_ascent_validates_start(gaussian_ensemble, rng):
    with pytest.raises(DomainError):
        ascent_refine_ric(gaussian_ensemble, 1, 2.0 * np.eye(5) / np.sqrt(5))
    with pytest.raises(DomainError):
        ascent_refine_ric(gaussian_ensemble, 1, np.eye(4) / 2.0)
    full = rng.standard_normal((5, 5))
    with pytest.raises(DomainError):
        ascent_refine_ric(gaussian_ensemble, 1, full / np.linalg.norm(full))


def test_mc_ascent_dominates_mc(gaussian_ensemble):
    plain = mc_matrix_ric(gaussian_ensemble, 2, samples=100, seed=4)
    refined = mc_ascent_ric(gaussian_ensemble, 2, samples=100, seed=4, restarts=3, steps=30)
    assert refined.value >= plain.value
    assert refined.samples == 100


def test_mc_ascent_dominates_mc_across_seeds(gaussian_ensemble):
    for seed in range(20):
        plain = mc_matrix_ric(gaussian_ensemble, 1, samples=100, seed=seed)
        refined = mc_ascent_ric(gaussian_ensemble, 1, samples=100, seed=seed, restarts=50, steps=30)
        assert refined.value >= plain.value


def test_ric_order():
    assert ric_order(2.0, 1) == 2
    assert ric_order(2.0, 2) == 4
    assert ric_order(1.5, 3) == 5
    assert ric_order(2.0, 3, 5, 5) == 5


def test_ric_gate():
    passed, delta = ric_gate(RicEstimate(2, 0.3, MONTE_CARLO, 100), 2.0, 0.05)
    assert passed and delta == pytest.approx(0.35)
    passed, delta = ric_gate(RicEstimate(2, 0.0, EXACT), 2.0, 0.05)
    assert passed and delta == 1e-12
    passed, _ = ric_gate(RicEstimate(2, 0.68, MONTE_CARLO, 100), 2.0, 0.05)
    assert not passed


def test_ric_estimate_documents(tmp_path):
    estimate = RicEstimate(4, 0.25, MC_ASCENT, 1000)
    path = tmp_path / 'ric.json'
    path.write_text(json.dumps(estimate.to_dict()))
    assert RicEstimate.load(path) == estimate
    with pytest.raises(DomainError):
        RicEstimate.from_dict({'order': 1, 'value': 0.1, 'method': 'guess'})
    with pytest.raises(DomainError):
        RicEstimate.from_dict({'order': 1})
