import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from rnnm_errors import DomainError
from rnnm_harness import (
    TRIAL_COLUMNS,
    ExperimentConfig,
    gen_gaussian_ensemble,
    gen_low_rank,
    gen_noise,
    gen_sparse,
    lambda_sweep,
    phase_sweep,
    read_records_csv,
    run_experiment,
    run_trial,
    write_records_csv,
    write_summary_json,
)
from rnnm_theory import PRECONDITION_UNMET, VERIFIED


def coordinate_config(**changes):
    base = dict(n1=5, n2=5, m=25, rank=1, k=1, t=2.0, lam=1e-4, epsilon=0.0, ensemble_kind='coordinate',
                noise_kind='none', trials=3, seed=11, ric_samples=200)
    base.update(changes)
    return ExperimentConfig(**base)


def gaussian_config(**changes):
    base = dict(n1=5, n2=5, m=20, rank=1, k=1, t=2.0, lam=0.1, epsilon=0.05, trials=6, seed=5,
                ric_samples=300, max_iters=4000)
    base.update(changes)
    return ExperimentConfig(**base)


def test_gaussian_ensemble_statistics():
    ens = gen_gaussian_ensemble(400, 5, 5, seed=1)
    assert abs(np.var(ens.matrices) - 1.0 / 400) <= 0.1 / 400
    assert_array_equal(ens.matrices, gen_gaussian_ensemble(400, 5, 5, seed=1).matrices)
    assert not np.array_equal(ens.matrices, gen_gaussian_ensemble(400, 5, 5, seed=2).matrices)
    with pytest.raises(DomainError):
        gen_gaussian_ensemble(0, 5, 5, seed=1)


@pytest.mark.parametrize('r', [1, 2, 4])
def test_low_rank_truth(r):
    X = gen_low_rank(5, 6, r, seed=r)
    s = np.linalg.svd(X, compute_uv=False)
    assert s[r - 1] > 1e-10
    if r < 5:
        assert s[r] <= 1e-10
    assert np.linalg.norm(X) == pytest.approx(1.0, abs=1e-12)
    assert_array_equal(X, gen_low_rank(5, 6, r, seed=r))
    with pytest.raises(DomainError):
        gen_low_rank(5, 6, 6, seed=0)


def test_noise_kinds():
    assert_array_equal(gen_noise(10, 0.5, 'none', seed=0), np.zeros(10))
    assert np.linalg.norm(gen_noise(10, 0.5, 'sphere-uniform-at-eps', seed=0)) == pytest.approx(0.5, abs=1e-12)
    assert all(np.linalg.norm(gen_noise(10, 0.5, 'sphere-uniform-scaled', seed=s)) <= 0.5 for s in range(1000))
    with pytest.raises(DomainError):
        gen_noise(10, -0.1, 'none', seed=0)


def test_sparse_truth():
    x = gen_sparse(8, 3, seed=2)
    assert np.count_nonzero(x) == 3
    assert np.linalg.norm(x) == pytest.approx(1.0)


def test_config_validation_and_documents():
    with pytest.raises(DomainError):
        ExperimentConfig(rank=6)
    with pytest.raises(DomainError):
        ExperimentConfig(ensemble_kind='coordinate', m=20)
    with pytest.raises(DomainError):
        ExperimentConfig(noise_kind='laplace')
    cfg = ExperimentConfig.from_dict({'lambda': 0.2, 'epsilon': 0.1, 'seed': 3})
    assert cfg.lam == 0.2
    assert cfg.to_dict()['lambda'] == 0.2
    with pytest.raises(DomainError):
        ExperimentConfig.from_dict({'lambda': 0.2, 'colour': 'blue'})


def test_noiseless_coordinate_trial_error_vanishes_with_lambda():
    record = run_trial(coordinate_config(), 0)
    assert record.frob_error <= 2 * 1e-4
    assert record.lemma3_pass
    assert record.gate_status == VERIFIED
    assert record.thm1_pass
    assert record.thm1_9_lhs <= record.thm1_9_rhs
    assert record.note == ''


def test_failing_gate_skips_error_bounds():
    # threshold at t = 1.01 is about 0.0995, below the margin alone
    record = run_trial(gaussian_config(t=1.01, ric_margin=0.2), 0)
    assert record.gate_status == PRECONDITION_UNMET
    assert record.thm1_8_lhs is None and record.thm1_pass is None


def test_trial_is_pure():
    cfg = gaussian_config()
    assert run_trial(cfg, 2) == run_trial(cfg, 2)


def test_failed_trial_is_recorded(tmp_path):
    cfg = coordinate_config(ensemble_kind='custom-path', ensemble_path=str(tmp_path / 'missing.json'))
    record = run_trial(cfg, 0)
    assert record.note
    assert math.isnan(record.frob_error)
    assert not record.converged


def test_single_trial_campaign_equals_run_trial():
    cfg = gaussian_config(trials=1)
    assert run_experiment(cfg).records[0] == run_trial(cfg, 0)


def test_campaign_outputs_are_deterministic(tmp_path):
    cfg = gaussian_config()
    paths = []
    for run, threads in enumerate((1, 3)):
        result = run_experiment(cfg, threads)
        csv_path, json_path = tmp_path / f'records{run}.csv', tmp_path / f'summary{run}.json'
        write_records_csv(result.records, csv_path)
        write_summary_json(result.summary, json_path)
        paths.append((csv_path, json_path))
    assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
    assert paths[0][1].read_bytes() == paths[1][1].read_bytes()

    rows = read_records_csv(paths[0][0])
    assert tuple(rows[0].keys()) == TRIAL_COLUMNS
    assert len(rows) == cfg.trials


def test_gaussian_campaign_invariants():
    result = run_experiment(gaussian_config(trials=8))
    for record in result.records:
        if record.converged:
            assert record.lemma3_pass
        if record.gate_status == VERIFIED:
            assert record.thm1_pass
    summary = result.summary
    assert summary['trials'] == 8
    assert summary['failed'] == 0
    assert summary['gate']['estimate']['order'] == 2
    assert set(summary['frob_error_quantiles']) == {'0.0', '0.5', '0.9', '1.0'}


@pytest.mark.parametrize('rank, m', [(1, 20), (2, 25)])
def test_gaussian_campaign_mostly_converges(rank, m):
    result = run_experiment(gaussian_config(rank=rank, k=rank, m=m, trials=20))
    assert result.summary['converged'] >= 16
    assert all(record.lemma3_pass for record in result.records if record.converged)


def test_gated_campaign_passes_error_bounds():
    result = run_experiment(gaussian_config(m=400, trials=5, ric_samples=500))
    assert result.summary['gate']['passed']
    assert result.summary['gated'] == 5
    assert result.summary['theorem1_pass_rate'] == 1.0


def test_phase_single_cell_matches_campaign():
    cfg = gaussian_config(trials=4)
    rows = phase_sweep(cfg, ('m', 'rank'), [cfg.m], [cfg.rank])
    records = run_experiment(cfg).records
    assert len(rows) == 1
    assert rows[0]['successes'] == sum(1 for r in records if r.frob_error <= cfg.success_threshold)


def test_phase_coordinate_column_succeeds():
    rows = phase_sweep(coordinate_config(lam=1e-3), ('m', 'rank'), [25], [1, 2])
    assert [row['success_fraction'] for row in rows] == [1.0, 1.0]
    with pytest.raises(DomainError):
        phase_sweep(coordinate_config(), ('rank', 'm'), [1], [25])


def test_lambda_sweep_error_vanishes():
    rows = lambda_sweep(coordinate_config(), [1e-1, 1e-2, 1e-3, 1e-4])
    errors = [row['max_frob_error'] for row in rows]
    assert all(later <= earlier for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] < 1e-3


@pytest.mark.slow
def test_acceptance_campaign():
    for rank, m in ((1, 15), (1, 25), (2, 20), (2, 25)):
        result = run_experiment(gaussian_config(rank=rank, k=rank, m=m, trials=125, ric_samples=10000,
                                                max_iters=20000), threads=4)
        for record in result.records:
            if record.converged:
                assert record.lemma3_pass
            if record.gate_status == VERIFIED:
                assert record.thm1_pass
