"""
Seeded experiment harness
Problem generation, per-trial verification, campaigns and sweeps
"""

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import CAMPAIGN_DEFAULTS, ENSEMBLE_KINDS, NOISE_KINDS, RIC_DEFAULTS, SOLVER_DEFAULTS, VERSION
from rnnm_errors import DomainError
from rnnm_linalg import MeasurementEnsemble, PathLike, apply_map, derive_seed, nuclear_norm, split_spectrum
from rnnm_ric import RicEstimate, mc_matrix_ric, ric_gate, ric_order
from rnnm_solvers import RecoveryProblem, SolverOptions, solve_rnnm
from rnnm_theory import PRECONDITION_UNMET, TheoryParams, check_lemma3, verify_theorem1

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    n1: int = CAMPAIGN_DEFAULTS['n1']
    n2: int = CAMPAIGN_DEFAULTS['n2']
    m: int = CAMPAIGN_DEFAULTS['m']
    rank: int = CAMPAIGN_DEFAULTS['rank']
    k: int = CAMPAIGN_DEFAULTS['k']
    t: float = CAMPAIGN_DEFAULTS['t']
    lam: float = CAMPAIGN_DEFAULTS['lambda']
    epsilon: float = CAMPAIGN_DEFAULTS['epsilon']
    ensemble_kind: str = CAMPAIGN_DEFAULTS['ensemble_kind']
    noise_kind: str = CAMPAIGN_DEFAULTS['noise_kind']
    trials: int = CAMPAIGN_DEFAULTS['trials']
    seed: int = 0
    ensemble_path: Optional[str] = None
    per_trial_ensemble: bool = False
    ric_samples: int = RIC_DEFAULTS['samples']
    ric_margin: float = RIC_DEFAULTS['margin']
    theorem_noise: bool = True
    max_iters: int = SOLVER_DEFAULTS['max_iters']
    tol: float = SOLVER_DEFAULTS['tol']
    success_threshold: float = CAMPAIGN_DEFAULTS['success_threshold']

    def __post_init__(self):
        if min(self.n1, self.n2, self.m, self.trials, self.k) < 1:
            raise DomainError("n1, n2, m, k and trials must be positive")
        if not 1 <= self.rank <= min(self.n1, self.n2):
            raise DomainError(f"rank must lie in [1, {min(self.n1, self.n2)}], got {self.rank}")
        if not self.t > 1:
            raise DomainError(f"t must exceed 1, got {self.t}")
        if not self.lam > 0 or self.epsilon < 0:
            raise DomainError(f"need lambda > 0 and epsilon >= 0, got {self.lam}, {self.epsilon}")
        if self.ensemble_kind not in ENSEMBLE_KINDS:
            raise DomainError(f"ensemble_kind must be one of {ENSEMBLE_KINDS}, got '{self.ensemble_kind}'")
        if self.noise_kind not in NOISE_KINDS:
            raise DomainError(f"noise_kind must be one of {NOISE_KINDS}, got '{self.noise_kind}'")
        if self.ensemble_kind == 'coordinate' and self.m != self.n1 * self.n2:
            raise DomainError(f"coordinate ensemble needs m = n1*n2 = {self.n1 * self.n2}, got {self.m}")
        if self.ensemble_kind == 'custom-path' and not self.ensemble_path:
            raise DomainError("custom-path ensemble needs ensemble_path")

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['lambda'] = doc.pop('lam')
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'ExperimentConfig':
        doc = dict(doc)
        if 'lambda' in doc:
            doc['lam'] = doc.pop('lambda')
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise DomainError(f"unknown config keys: {unknown}")
        return cls(**doc)

    @classmethod
    def load(cls, path: PathLike) -> 'ExperimentConfig':
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class TrialRecord:
    trial_seed: int
    frob_error: float
    map_error: float
    tail_norm: float
    lemma3_pass: bool
    thm1_8_lhs: Optional[float]
    thm1_8_rhs: Optional[float]
    thm1_9_lhs: Optional[float]
    thm1_9_rhs: Optional[float]
    gate_status: str
    iterations: int
    converged: bool = False
    thm1_pass: Optional[bool] = None
    note: str = ''


TRIAL_COLUMNS = tuple(f.name for f in fields(TrialRecord))


def gen_gaussian_ensemble(m: int, n1: int, n2: int, seed: int) -> MeasurementEnsemble:
    """m matrices with i.i.d. N(0, 1/m) entries"""
    if m < 1:
        raise DomainError(f"m must be positive, got {m}")
    rng = np.random.default_rng(seed)
    return MeasurementEnsemble(rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, n1, n2)))


def gen_low_rank(n1: int, n2: int, r: int, seed: int) -> np.ndarray:
    """Unit-Frobenius product of Gaussian factors, rank r almost surely"""
    if not 1 <= r <= min(n1, n2):
        raise DomainError(f"rank must lie in [1, {min(n1, n2)}], got {r}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n1, r)) @ rng.standard_normal((n2, r)).T
    return X / np.linalg.norm(X)


def gen_noise(m: int, epsilon: float, kind: str, seed: int) -> np.ndarray:
    """Noise with ||n||_2 <= epsilon: zero, on the eps-sphere, or at radius u*eps"""
    if epsilon < 0:
        raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
    if kind not in NOISE_KINDS:
        raise DomainError(f"noise kind must be one of {NOISE_KINDS}, got '{kind}'")
    if kind == 'none' or epsilon == 0:
        return np.zeros(m)
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(m)
    direction /= np.linalg.norm(direction)
    radius = epsilon if kind == 'sphere-uniform-at-eps' else rng.uniform(0.0, 1.0) * epsilon
    return radius * direction


def gen_gaussian_design(m: int, n: int, seed: int) -> np.ndarray:
    """m x n design with i.i.d. N(0, 1/m) entries, the vector counterpart of gen_gaussian_ensemble"""
    if m < 1 or n < 1:
        raise DomainError(f"design needs positive dimensions, got {m}x{n}")
    return np.random.default_rng(seed).normal(0.0, 1.0 / math.sqrt(m), size=(m, n))


def gen_sparse(n: int, s: int, seed: int) -> np.ndarray:
    """Unit-norm vector with s Gaussian entries on a uniformly drawn support"""
    if not 1 <= s <= n:
        raise DomainError(f"sparsity must lie in [1, {n}], got {s}")
    rng = np.random.default_rng(seed)
    x = np.zeros(n)
    support = rng.choice(n, size=s, replace=False)
    x[support] = rng.standard_normal(s)
    return x / np.linalg.norm(x)


def campaign_ensemble(cfg: ExperimentConfig, trial_seed: Optional[int] = None) -> MeasurementEnsemble:
    """The campaign's ensemble, or the trial's own when trial_seed is given"""
    if cfg.ensemble_kind == 'coordinate':
        return MeasurementEnsemble.coordinate(cfg.n1, cfg.n2)
    if cfg.ensemble_kind == 'custom-path':
        ens = MeasurementEnsemble.load(cfg.ensemble_path)
        if ens.shape != (cfg.n1, cfg.n2) or ens.m != cfg.m:
            raise DomainError(f"ensemble file has (m, n1, n2)=({ens.m}, {ens.n1}, {ens.n2}), "
                              f"config expects ({cfg.m}, {cfg.n1}, {cfg.n2})")
        return ens
    seed = derive_seed(cfg.seed, 'ensemble') if trial_seed is None else derive_seed(trial_seed, 'ensemble')
    return gen_gaussian_ensemble(cfg.m, cfg.n1, cfg.n2, seed)


def estimate_gate(cfg: ExperimentConfig, ens: MeasurementEnsemble, seed: int) -> Tuple[RicEstimate, bool, float]:
    """Monte-Carlo delta_tk for the ensemble and the resulting gate decision"""
    order = ric_order(cfg.t, cfg.k, cfg.n1, cfg.n2)
    estimate = mc_matrix_ric(ens, order, cfg.ric_samples, derive_seed(seed, 'ric'))
    passed, delta = ric_gate(estimate, cfg.t, cfg.ric_margin)
    return estimate, passed, delta


def _failed_record(trial_seed: int, gate_status: str, note: str) -> TrialRecord:
    nan = float('nan')
    return TrialRecord(trial_seed, nan, nan, nan, False, None, None, None, None, gate_status, 0, False, None, note)


def run_trial(
    cfg: ExperimentConfig,
    trial_index: int,
    ensemble: Optional[MeasurementEnsemble] = None,
    gate: Optional[Tuple[bool, float]] = None,
) -> TrialRecord:
    """
    One seeded recovery: generate, solve RNNM, check the solution inequalities
    and, when the RIC gate passes, the error bounds

    Solver and check failures are recorded in the returned record.
    """
    trial_seed = derive_seed(cfg.seed, trial_index)
    gate_status = PRECONDITION_UNMET
    try:
        if cfg.per_trial_ensemble:
            ens = campaign_ensemble(cfg, trial_seed)
            _, passed, delta = estimate_gate(cfg, ens, trial_seed)
        else:
            ens = ensemble if ensemble is not None else campaign_ensemble(cfg)
            if gate is None:
                _, passed, delta = estimate_gate(cfg, ens, cfg.seed)
            else:
                passed, delta = gate

        truth = gen_low_rank(cfg.n1, cfg.n2, cfg.rank, derive_seed(trial_seed, 'truth'))
        radius = min(cfg.epsilon, cfg.lam / 2.0) if cfg.theorem_noise else cfg.epsilon
        noise = gen_noise(ens.m, radius, cfg.noise_kind, derive_seed(trial_seed, 'noise'))
        b = apply_map(ens, truth) + noise
        problem = RecoveryProblem(ens, b, cfg.lam, cfg.epsilon, truth=truth)

        opts = SolverOptions(max_iters=cfg.max_iters, tol=cfg.tol, seed=trial_seed)
        result = solve_rnnm(problem, opts)
        Xs = result.solution
        H = Xs - truth
        _, tail = split_spectrum(truth, cfg.k)
        lemma3 = check_lemma3(problem, Xs, cfg.k)

        thm = None
        if passed:
            params = TheoryParams(cfg.t, cfg.k, delta, cfg.lam, cfg.epsilon)
            thm = verify_theorem1(problem, Xs, params)
            gate_status = thm.status
        verified = thm is not None and thm.verified
        if result.converged and not lemma3.passed:
            logger.warning(f"trial {trial_index}: solution inequalities violated on a converged solve")
        if verified and not thm.passed:
            logger.warning(f"trial {trial_index}: error bound violated under the RIC gate")

        return TrialRecord(
            trial_seed=trial_seed,
            frob_error=float(np.linalg.norm(H)),
            map_error=float(np.linalg.norm(apply_map(ens, H))),
            tail_norm=nuclear_norm(tail),
            lemma3_pass=lemma3.passed,
            thm1_8_lhs=thm.lhs8 if verified else None,
            thm1_8_rhs=thm.rhs8 if verified else None,
            thm1_9_lhs=thm.lhs9 if verified else None,
            thm1_9_rhs=thm.rhs9 if verified else None,
            gate_status=gate_status,
            iterations=result.iterations,
            converged=result.converged,
            thm1_pass=thm.passed if verified else None,
        )
    except Exception as e:
        logger.warning(f"trial {trial_index} failed: {e}")
        return _failed_record(trial_seed, gate_status, f"{type(e).__name__}: {e}")


@dataclass(frozen=True)
class ExperimentResult:
    records: Tuple[TrialRecord, ...]
    summary: Dict[str, Any]


def _finite(values: Sequence[Optional[float]]) -> List[float]:
    return [v for v in values if v is not None and math.isfinite(v)]


def _rate(hits: int, total: int) -> Optional[float]:
    return hits / total if total else None


def summarize(cfg: ExperimentConfig, records: Sequence[TrialRecord], gate: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    converged = [r for r in records if r.converged]
    gated = [r for r in records if r.gate_status != PRECONDITION_UNMET]
    slack8 = _finite([r.thm1_8_rhs - r.thm1_8_lhs for r in gated])
    slack9 = _finite([r.thm1_9_rhs - r.thm1_9_lhs for r in gated])
    errors = _finite([r.frob_error for r in records])
    quantiles = {}
    if errors:
        for q in (0.0, 0.5, 0.9, 1.0):
            quantiles[str(q)] = float(np.quantile(errors, q))
    return {
        'version': VERSION,
        'config': cfg.to_dict(),
        'gate': gate,
        'trials': len(records),
        'failed': sum(1 for r in records if r.note),
        'converged': len(converged),
        'lemma3_pass_rate': _rate(sum(1 for r in converged if r.lemma3_pass), len(converged)),
        'gated': len(gated),
        'theorem1_pass_rate': _rate(sum(1 for r in gated if r.thm1_pass), len(gated)),
        'slack8': {'min': min(slack8), 'max': max(slack8)} if slack8 else None,
        'slack9': {'min': min(slack9), 'max': max(slack9)} if slack9 else None,
        'frob_error_quantiles': quantiles,
    }


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """
    Run cfg.trials seeded trials

    One ensemble and one RIC gate per campaign unless per_trial_ensemble
    is set. Records are ordered by trial index whatever the thread count.
    """
    logger.info(f"campaign: {cfg.trials} trials, {cfg.ensemble_kind} ensemble m={cfg.m}, "
                f"{cfg.n1}x{cfg.n2} rank {cfg.rank}, lambda={cfg.lam}, eps={cfg.epsilon}, seed={cfg.seed}")
    ensemble = gate = gate_doc = None
    if not cfg.per_trial_ensemble:
        ensemble = campaign_ensemble(cfg)
        estimate, passed, delta = estimate_gate(cfg, ensemble, cfg.seed)
        gate = (passed, delta)
        gate_doc = {'estimate': estimate.to_dict(), 'delta_used': delta, 'passed': passed}
        logger.info(f"campaign RIC gate: delta_{estimate.order} >= {estimate.value:.4f}, "
                    f"delta used {delta:.4f}, passed={passed}")

    def trial(index: int) -> TrialRecord:
        return run_trial(cfg, index, ensemble, gate)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = tuple(pool.map(trial, range(cfg.trials)))

    summary = summarize(cfg, records, gate_doc)
    logger.info(f"campaign done: {summary['converged']}/{summary['trials']} converged, "
                f"{summary['gated']} gated, failed={summary['failed']}")
    return ExperimentResult(records, summary)


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(records: Sequence[TrialRecord], path: PathLike):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(TRIAL_COLUMNS)
        for record in records:
            writer.writerow([_cell(getattr(record, name)) for name in TRIAL_COLUMNS])


def read_records_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(doc: Dict[str, Any], path: PathLike):
    with open(path, 'w') as f:
        json.dump(_json_safe(doc), f, indent=2, sort_keys=True)
        f.write('\n')


def write_summary_json(summary: Dict[str, Any], path: PathLike):
    write_json(summary, path)


PHASE_AXES = {
    ('m', 'rank'): ('m', 'rank'),
    ('lambda', 'epsilon'): ('lam', 'epsilon'),
}

PHASE_COLUMNS = ('axis1', 'value1', 'axis2', 'value2', 'trials', 'successes', 'success_fraction',
                 'median_frob_error', 'converged', 'gated')


def _cell_config(cfg: ExperimentConfig, attrs: Tuple[str, str], v1: Any, v2: Any) -> ExperimentConfig:
    changes = {attrs[0]: v1, attrs[1]: v2}
    if attrs == ('m', 'rank') and cfg.k == cfg.rank:
        changes['k'] = v2
    return replace(cfg, **changes)


def phase_sweep(
    cfg: ExperimentConfig,
    axes: Tuple[str, str],
    values1: Sequence[Any],
    values2: Sequence[Any],
    threads: int = 1,
) -> List[Dict[str, Any]]:
    """
    Success fraction (frob_error <= cfg.success_threshold) per grid cell

    Every cell reuses the base seed, so a 1x1 grid reproduces run_experiment.
    """
    axes = tuple(axes)
    if axes not in PHASE_AXES:
        raise DomainError(f"phase axes must be one of {sorted(PHASE_AXES)}, got {axes}")
    attrs = PHASE_AXES[axes]
    rows = []
    for v1 in values1:
        for v2 in values2:
            cell = _cell_config(cfg, attrs, v1, v2)
            result = run_experiment(cell, threads)
            errors = [r.frob_error for r in result.records]
            successes = sum(1 for e in errors if math.isfinite(e) and e <= cfg.success_threshold)
            finite = _finite(errors)
            rows.append({
                'axis1': axes[0], 'value1': v1, 'axis2': axes[1], 'value2': v2,
                'trials': len(errors),
                'successes': successes,
                'success_fraction': successes / len(errors),
                'median_frob_error': float(np.median(finite)) if finite else None,
                'converged': result.summary['converged'],
                'gated': result.summary['gated'],
            })
            logger.info(f"phase cell {axes[0]}={v1}, {axes[1]}={v2}: success {successes}/{len(errors)}")
    return rows


def write_rows_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str], path: PathLike):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


def lambda_sweep(cfg: ExperimentConfig, lambdas: Sequence[float], threads: int = 1) -> List[Dict[str, Any]]:
    """Noiseless recovery error as lambda shrinks (eps = 0, no noise)"""
    rows = []
    for lam in lambdas:
        cell = replace(cfg, lam=lam, epsilon=0.0, noise_kind='none')
        result = run_experiment(cell, threads)
        errors = _finite([r.frob_error for r in result.records])
        rows.append({
            'lambda': lam,
            'max_frob_error': max(errors) if errors else None,
            'median_frob_error': float(np.median(errors)) if errors else None,
            'converged': result.summary['converged'],
        })
    return rows
