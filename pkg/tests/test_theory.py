import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from rnnm_errors import DomainError, MembershipError, SizeError
from rnnm_linalg import MeasurementEnsemble, soft_threshold, svt
from rnnm_solvers import RecoveryProblem
from rnnm_theory import (
    PRECONDITION_UNMET,
    VERIFIED,
    TheoryParams,
    betas,
    check_lemma2,
    check_lemma3,
    compare_conditions,
    in_polytope,
    lemma1_decompose,
    rip_threshold,
    theorem1_constants,
    threshold_report,
    verify_sparse_theorem1,
    verify_theorem1,
)

mpmath.mp.dps = 50


def oracle_constants(t, k, delta, lam, eps):
    t, delta, lam, eps = (mpmath.mpf(x) for x in (t, delta, lam, eps))
    rk = mpmath.sqrt(k)
    b1 = 2 / ((1 - delta) * mpmath.sqrt(1 + delta))
    b2 = delta / mpmath.sqrt((1 - delta ** 2) * (t - 1))
    a = rk * b1 * lam + eps
    c1 = 2 * lam / a
    c2 = 2 * a
    c3 = (2 * rk * b1 * (2 * rk + 1 + b2) * lam + 2 * (rk * b2 + 2 * b2 + rk) * eps) / (k * b1 * (1 - b2) * lam)
    c4 = (2 * (k + rk) * b1 * lam + (b2 + 2 * rk - rk * b2) * eps) * a / (rk * (1 - b2) * lam)
    return {'threshold': mpmath.sqrt((t - 1) / t), 'beta1': b1, 'beta2': b2, 'c1': c1, 'c2': c2, 'c3': c3, 'c4': c4}


def test_rip_threshold():
    assert rip_threshold(2.0) == pytest.approx(math.sqrt(0.5), rel=1e-15)
    with pytest.raises(DomainError):
        rip_threshold(1.0)


def test_betas_known_values():
    beta1, beta2 = betas(0.5, 2.0)
    assert beta1 == pytest.approx(3.265986323710904, rel=1e-14)
    assert beta2 == pytest.approx(0.5773502691896258, rel=1e-14)


def test_threshold_and_betas_are_increasing():
    thresholds = [rip_threshold(t) for t in np.linspace(1.01, 10.0, 200)]
    assert np.all(np.diff(thresholds) > 0)
    deltas = np.linspace(0.01, 0.99, 99)
    for t in (1.5, 2.0, 4.0):
        values = np.array([betas(d, t) for d in deltas])
        assert np.all(np.diff(values[:, 0]) > 0)
        assert np.all(np.diff(values[:, 1]) > 0)


def test_betas_small_delta_limits():
    beta1, beta2 = betas(1e-9, 2.0)
    assert beta1 == pytest.approx(2.0, abs=1e-8)
    assert 0 < beta2 <= 1e-8


def test_closed_forms_match_high_precision_oracle():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        t = rng.uniform(1.01, 5.0)
        delta = rng.uniform(0.01, 0.99)
        k = int(rng.integers(1, 11))
        lam = rng.uniform(1e-3, 1.0)
        eps = rng.uniform(1e-3, 1.0)
        bounds = theorem1_constants(TheoryParams(t, k, delta, lam, eps))
        expected = oracle_constants(t, k, delta, lam, eps)
        assert rip_threshold(t) == pytest.approx(float(expected['threshold']), rel=1e-12)
        for name in ('beta1', 'beta2', 'c1', 'c2'):
            assert getattr(bounds, name) == pytest.approx(float(expected[name]), rel=1e-12)
        assert bounds.beta2_lt_one == (expected['beta2'] < 1)
        # 1 - beta2 loses relative accuracy right at the boundary
        if expected['beta2'] < 1 - mpmath.mpf('1e-3'):
            assert bounds.c3 == pytest.approx(float(expected['c3']), rel=1e-12)
            assert bounds.c4 == pytest.approx(float(expected['c4']), rel=1e-12)
        elif expected['beta2'] > 1:
            assert bounds.c3 is None and bounds.c4 is None


def test_condition_equivalence_grid():
    for t in np.linspace(1.01, 5.0, 100):
        for delta in np.linspace(0.005, 0.995, 100):
            _, beta2 = betas(delta, t)
            assert (beta2 < 1) == (delta < rip_threshold(t))


@settings(max_examples=200, deadline=None)
@given(t=st.floats(min_value=1.01, max_value=10.0), delta=st.floats(min_value=0.001, max_value=0.999))
def test_condition_ok_matches_beta2(t, delta):
    params = TheoryParams(t, 2, delta, 0.1, 0.05)
    if abs(delta - rip_threshold(t)) > 1e-9:
        assert theorem1_constants(params).beta2_lt_one == params.condition_ok


@pytest.mark.parametrize('t', [4.0 / 3.0, 2.0, 3.0])
def test_threshold_itself_is_unmet(t):
    bounds = theorem1_constants(TheoryParams(t, 1, rip_threshold(t), 0.1, 0.05))
    assert not bounds.condition_ok
    assert not bounds.beta2_lt_one
    assert bounds.c3 is None and bounds.c4 is None


def test_threshold_report():
    small = threshold_report(1.2)
    assert small['regime'] == 'small-t'
    assert small['small_t'] == pytest.approx(1.2 / 2.8)
    assert 'small_t' not in threshold_report(2.0)


def test_compare_conditions():
    rows = {row['condition']: row for row in compare_conditions({2: 0.45, 4: 0.5}, k=1)}
    assert rows['delta_2k < 0.4931']['holds'] is True
    assert rows['delta_4k < sqrt(2) - 1']['holds'] is False
    assert rows['delta_k < 1/3']['holds'] is None


def test_params_validation():
    with pytest.raises(DomainError):
        TheoryParams(2.0, 0, 0.5, 0.1)
    with pytest.raises(DomainError):
        TheoryParams(2.0, 1, 1.0, 0.1)
    with pytest.raises(DomainError):
        TheoryParams(2.0, 1, 0.5, 0.0)


def _noiseless_coordinate(truth, lam):
    ens = MeasurementEnsemble.coordinate(*truth.shape)
    return RecoveryProblem(ens, truth.ravel(), lam, 0.0, truth=truth)


def test_lemma3_holds_at_truth_and_at_minimizer(rank_one):
    problem = _noiseless_coordinate(rank_one, 0.01)
    assert check_lemma3(problem, rank_one, 1).passed
    report = check_lemma3(problem, svt(rank_one, 0.01), 1)
    assert report.passed
    assert report.map_norm == pytest.approx(0.01, rel=1e-9)


def test_lemma3_fails_far_from_the_minimizer(rank_one, rng):
    problem = _noiseless_coordinate(rank_one, 0.01)
    report = check_lemma3(problem, rank_one + rng.standard_normal((5, 5)), 1)
    assert not report.pass5
    assert not report.passed


def test_lemma3_needs_truth(coordinate_ensemble):
    problem = RecoveryProblem(coordinate_ensemble, np.zeros(25), 0.1)
    with pytest.raises(DomainError):
        check_lemma3(problem, np.zeros((5, 5)), 1)


def test_theorem1_verified_on_coordinate_minimizer(rank_one):
    problem = _noiseless_coordinate(rank_one, 0.01)
    report = verify_theorem1(problem, svt(rank_one, 0.01), TheoryParams(2.0, 1, 0.01, 0.01, 0.0))
    assert report.status == VERIFIED
    assert report.passed
    assert report.tail_norm == pytest.approx(0.0, abs=1e-12)
    assert report.lhs9 == pytest.approx(0.01, rel=1e-9)
    assert report.to_dict()['slack9'] > 0


def test_theorem1_gates(rank_one, coordinate_ensemble):
    problem = _noiseless_coordinate(rank_one, 0.1)
    report = verify_theorem1(problem, rank_one, TheoryParams(2.0, 1, 0.8, 0.1, 0.0))
    assert report.status == PRECONDITION_UNMET
    assert report.passed is None

    noise = np.zeros(25)
    noise[0] = 0.5
    noisy = RecoveryProblem(coordinate_ensemble, rank_one.ravel() + noise, 0.1, 1.0, truth=rank_one)
    report = verify_theorem1(noisy, rank_one, TheoryParams(2.0, 1, 0.1, 0.1, 1.0))
    assert report.status == PRECONDITION_UNMET
    assert 'noise' in report.reason

    with pytest.raises(DomainError):
        verify_theorem1(problem, rank_one, TheoryParams(2.0, 1, 0.1, 0.2, 0.0))


def test_lemma2_on_coordinate_ensemble(coordinate_ensemble, rng):
    H = rng.standard_normal((5, 5))
    report = check_lemma2(coordinate_ensemble, H, 2, TheoryParams(2.0, 2, 0.01, 0.1))
    assert report.condition_ok
    assert report.holds


def test_sparse_theorem1_on_identity_design():
    x = np.zeros(6)
    x[2] = 1.0
    x_sharp = soft_threshold(x, 0.01)
    report = verify_sparse_theorem1(np.eye(6), x, x, x_sharp, TheoryParams(2.0, 1, 0.01, 0.01, 0.0))
    assert report.status == VERIFIED
    assert report.passed
    assert report.lhs8 == pytest.approx(0.01)


def test_lemma1_balanced_vector():
    v = np.full(4, 0.5)
    decomposition = lemma1_decompose(v, 1.0, 2)
    assert decomposition.violations(v) == []
    assert_allclose(decomposition.recombine(), v, atol=1e-9)
    assert all(np.count_nonzero(u) <= 2 for u in decomposition.atoms)


def test_lemma1_sparse_vector_is_its_own_atom():
    v = np.array([0.0, 0.3, 0.0, 0.2])
    decomposition = lemma1_decompose(v, 0.5, 2)
    assert decomposition.weights == (1.0,)
    assert_allclose(decomposition.atoms[0], v)


def test_lemma1_random_members():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, 4))
        v = rng.uniform(0.0, 1.0, n) * (rng.uniform(size=n) < 0.8)
        if not v.any():
            v[0] = 1.0
        alpha = max(v.max(), v.sum() / k) * rng.uniform(1.0, 1.5)
        assert in_polytope(v, alpha, k)
        decomposition = lemma1_decompose(v, alpha, k)
        assert decomposition.violations(v) == []


def test_lemma1_rejects_non_members():
    rng = np.random.default_rng(6)
    for i in range(20):
        n = int(rng.integers(3, 9))
        v = rng.uniform(0.1, 1.0, n)
        if i % 2:
            alpha, k = 0.9 * v.max(), 2
        else:
            alpha, k = v.max(), 1
            v = np.full(n, alpha)
        with pytest.raises(MembershipError):
            lemma1_decompose(v, alpha, k)


def test_lemma1_domain_checks():
    with pytest.raises(DomainError):
        lemma1_decompose([0.5, -0.1], 1.0, 1)
    with pytest.raises(SizeError):
        lemma1_decompose(np.full(11, 0.01), 1.0, 2)
