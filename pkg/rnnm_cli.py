"""
Command line for the RNNM recovery toolkit

Subcommands: generate, solve, bounds, ric, verify, experiment, phase.
Machine-readable output goes to --out, a short human summary to stdout.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from config import (
    CAMPAIGN_DEFAULTS,
    ENSEMBLE_KINDS,
    LOGGING_DEFAULTS,
    NOISE_KINDS,
    RIC_DEFAULTS,
    RIC_MODES,
    SOLVER_DEFAULTS,
    SOLVER_NAMES,
    VERSION,
)
from rnnm_errors import DomainError, RnnmError
from rnnm_harness import (
    PHASE_AXES,
    PHASE_COLUMNS,
    ExperimentConfig,
    campaign_ensemble,
    gen_gaussian_design,
    gen_low_rank,
    gen_noise,
    gen_sparse,
    phase_sweep,
    run_experiment,
    write_json,
    write_records_csv,
    write_rows_csv,
    write_summary_json,
)
from rnnm_linalg import MeasurementEnsemble, apply_map, as_dense, derive_seed
from rnnm_ric import RicEstimate, exact_sparse_ric, mc_ascent_ric, mc_matrix_ric, ric_gate, ric_order
from rnnm_solvers import RecoveryProblem, SolverOptions, SparseProblem, load_problem, solve, solve_bpdn
from rnnm_theory import (
    PRECONDITION_UNMET,
    Theorem1Report,
    TheoryParams,
    check_lemma3,
    rip_threshold,
    theorem1_constants,
    threshold_report,
    verify_sparse_theorem1,
    verify_theorem1,
)

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Flag combination argparse cannot express"""


def setup_logging(verbose: bool = False):
    load_dotenv()
    level = 'DEBUG' if verbose else os.getenv('RNNM_LOG_LEVEL', LOGGING_DEFAULTS['level'])
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_file = os.getenv('RNNM_LOG_FILE', LOGGING_DEFAULTS['file'])
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOGGING_DEFAULTS['format'],
        handlers=handlers,
    )


def default_threads() -> int:
    try:
        return max(1, int(os.getenv('RNNM_THREADS', '1')))
    except ValueError:
        return 1


def _meta(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ('handler', 'command', 'threads', 'verbose')}
    return {'version': VERSION, 'command': args.command, 'args': flags}


def _emit(doc: Dict[str, Any], args: argparse.Namespace):
    if args.out:
        write_json(dict(doc, meta=_meta(args)), args.out)
        logger.info(f"wrote {args.out}")


def _solver_options(args: argparse.Namespace, seed: int = 0) -> SolverOptions:
    return SolverOptions(max_iters=args.max_iters, tol=args.tol, seed=seed)


def cmd_generate(args: argparse.Namespace) -> int:
    seed = args.seed
    if args.kind == 'sparse':
        A = gen_gaussian_design(args.m, args.n, derive_seed(seed, 'design'))
        x = gen_sparse(args.n, args.sparsity, derive_seed(seed, 'truth'))
        noise = gen_noise(args.m, args.eps, args.noise_kind, derive_seed(seed, 'noise'))
        problem = SparseProblem(A, A @ x + noise, args.lam, args.eps, truth=x)
        write_json(dict(problem.to_dict(), meta=_meta(args)), args.out)
        print(f"sparse problem: {args.m}x{args.n} design, {args.sparsity}-sparse truth, ||n||={np.linalg.norm(noise):.4g}")
        return 0

    cfg = ExperimentConfig(
        n1=args.n1, n2=args.n2, m=args.m, rank=args.rank, k=args.rank, lam=args.lam, epsilon=args.eps,
        ensemble_kind=args.ensemble_kind, noise_kind=args.noise_kind, trials=1, seed=seed,
        ensemble_path=args.ensemble,
    )
    ens = campaign_ensemble(cfg)
    truth = gen_low_rank(cfg.n1, cfg.n2, cfg.rank, derive_seed(seed, 'truth'))
    noise = gen_noise(ens.m, cfg.epsilon, cfg.noise_kind, derive_seed(seed, 'noise'))
    problem = RecoveryProblem(ens, apply_map(ens, truth) + noise, cfg.lam, cfg.epsilon, truth=truth)
    doc = dict(problem.to_dict(), meta=_meta(args))
    if args.ensemble_out:
        write_json(dict(ens.to_dict(), meta=_meta(args)), args.ensemble_out)
        doc['ensemble'] = os.path.relpath(args.ensemble_out, Path(args.out).parent or '.')
    write_json(doc, args.out)
    print(f"matrix problem: {cfg.n1}x{cfg.n2} rank {cfg.rank}, m={ens.m}, ||n||={np.linalg.norm(noise):.4g}")
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    problem = load_problem(args.problem)
    opts = _solver_options(args)
    if isinstance(problem, SparseProblem):
        if args.solver != 'bpdn':
            raise DomainError(f"sparse problems are solved with bpdn, not '{args.solver}'")
        result = solve_bpdn(problem.A, problem.b, problem.lam, opts)
    else:
        if args.solver == 'bpdn':
            raise DomainError("bpdn needs a problem file with a design matrix A")
        result = solve(problem, opts, args.solver)
    _emit(result.to_dict(), args)
    print(f"{result.solver}: {result.iterations} iterations, objective {result.final_objective:.10g}, "
          f"converged={result.converged}")
    return 0


def _bounds_table(params: TheoryParams, doc: Dict[str, Any]) -> str:
    rows = [
        ('t', params.t), ('k', params.k), ('delta', params.delta),
        ('lambda', params.lam), ('epsilon', params.epsilon),
        ('threshold', doc['threshold']['sharp']),
    ]
    rows += [(name, doc['bounds'][name]) for name in ('beta1', 'beta2', 'c1', 'c2', 'c3', 'c4', 'condition_ok')]
    width = max(len(name) for name, _ in rows)
    lines = []
    for name, value in rows:
        text = 'n/a' if value is None else (f"{value:.12g}" if isinstance(value, float) else str(value))
        lines.append(f"{name:<{width}}  {text}")
    return '\n'.join(lines)


def cmd_bounds(args: argparse.Namespace) -> int:
    params = TheoryParams(args.t, args.k, args.delta, args.lam, args.eps)
    doc = {'threshold': threshold_report(args.t), 'bounds': theorem1_constants(params).to_dict()}
    _emit(doc, args)
    print(json.dumps(doc, sort_keys=True))
    print(_bounds_table(params, doc))
    return 0


def _load_design(args: argparse.Namespace) -> np.ndarray:
    if args.design:
        with open(args.design, 'r') as f:
            doc = json.load(f)
        if 'A' not in doc:
            raise DomainError(f"{args.design} has no design matrix A")
        return as_dense(doc['A'], name='design')
    return MeasurementEnsemble.load(args.ensemble).operator


def cmd_ric(args: argparse.Namespace) -> int:
    if args.mode == 'exact':
        if not (args.design or args.ensemble):
            raise UsageError("exact mode needs --design or --ensemble")
        estimate = exact_sparse_ric(_load_design(args), args.k)
    else:
        if args.seed is None:
            raise UsageError(f"--seed is required for --mode {args.mode}")
        if not args.ensemble:
            raise UsageError(f"--mode {args.mode} needs --ensemble")
        ens = MeasurementEnsemble.load(args.ensemble)
        if args.mode == 'mc':
            estimate = mc_matrix_ric(ens, args.k, args.samples, args.seed)
        else:
            estimate = mc_ascent_ric(ens, args.k, args.samples, args.seed, args.restarts, args.steps)
    _emit(estimate.to_dict(), args)
    bound = 'exact' if estimate.is_exact else 'lower bound'
    print(f"delta_{estimate.order} = {estimate.value:.10g} ({estimate.method}, {bound})")
    return 0


def _load_solution(path: str) -> np.ndarray:
    with open(path, 'r') as f:
        doc = json.load(f)
    if 'solution' not in doc:
        raise DomainError(f"{path} has no solution field")
    return np.asarray(doc['solution'], dtype=np.float64)


def _resolve_delta(args: argparse.Namespace, problem, order: int) -> Dict[str, Any]:
    """delta source for verify: --delta as given, a RIC file or a fresh estimate with the margin"""
    if args.delta is not None:
        return {'passed': args.delta < rip_threshold(args.t), 'delta': args.delta, 'estimate': None}
    if args.ric:
        estimate = RicEstimate.load(args.ric)
        if estimate.order < order:
            raise DomainError(f"RIC file holds delta_{estimate.order}, verification needs order {order}")
    elif isinstance(problem, SparseProblem):
        estimate = exact_sparse_ric(problem.A, order)
    else:
        if args.ric_samples is None or args.seed is None:
            raise UsageError("verify needs --delta, --ric, or --ric-samples with --seed")
        estimate = mc_matrix_ric(problem.ensemble, order, args.ric_samples, args.seed)
    passed, delta = ric_gate(estimate, args.t, args.margin)
    return {'passed': passed, 'delta': delta, 'estimate': estimate.to_dict()}


def cmd_verify(args: argparse.Namespace) -> int:
    problem = load_problem(args.problem)
    solution = _load_solution(args.solution)
    if problem.truth is None:
        raise DomainError("verification needs a problem file with the ground truth")

    if isinstance(problem, SparseProblem):
        order = min(ric_order(args.t, args.k), problem.A.shape[1])
    else:
        order = ric_order(args.t, args.k, *problem.ensemble.shape)
    gate = _resolve_delta(args, problem, order)

    lemma3 = None
    if not isinstance(problem, SparseProblem):
        lemma3 = check_lemma3(problem, solution, args.k)
    if gate['passed']:
        params = TheoryParams(args.t, args.k, gate['delta'], problem.lam, problem.epsilon)
        if isinstance(problem, SparseProblem):
            theorem = verify_sparse_theorem1(problem.A, problem.b, problem.truth, solution, params)
        else:
            theorem = verify_theorem1(problem, solution, params)
    else:
        theorem = Theorem1Report(
            status=PRECONDITION_UNMET,
            reason=f"delta_{order}={gate['delta']:.6g} is not below the threshold {rip_threshold(args.t):.6g}")

    doc = {
        'order': order,
        'gate': gate,
        'lemma3': None if lemma3 is None else lemma3.to_dict(),
        'theorem1': theorem.to_dict(),
    }
    _emit(doc, args)
    if lemma3 is not None:
        print(f"solution inequalities: {'pass' if lemma3.passed else 'FAIL'}")
    if theorem.verified:
        print(f"error bounds: map {'pass' if theorem.pass8 else 'FAIL'}, frobenius {'pass' if theorem.pass9 else 'FAIL'}")
    else:
        print(f"error bounds: {theorem.status} ({theorem.reason})")
    return 0


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    doc = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    overrides = {
        'n1': args.n1, 'n2': args.n2, 'm': args.m, 'rank': args.rank, 'k': args.k, 't': args.t,
        'lambda': args.lam, 'epsilon': args.eps, 'ensemble_kind': args.ensemble_kind,
        'ensemble_path': args.ensemble, 'noise_kind': args.noise_kind, 'trials': args.trials,
        'ric_samples': args.ric_samples, 'ric_margin': args.margin, 'max_iters': args.max_iters, 'tol': args.tol,
    }
    doc.update({key: value for key, value in overrides.items() if value is not None})
    if args.per_trial_ensemble:
        doc['per_trial_ensemble'] = True
    if args.rank is not None and args.k is None:
        doc['k'] = args.rank
    doc['seed'] = args.seed
    return ExperimentConfig.from_dict(doc)


def _summary_path(args: argparse.Namespace) -> str:
    return args.summary or str(Path(args.out).with_suffix('.summary.json'))


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg, args.threads)
    write_records_csv(result.records, args.out)
    summary = dict(result.summary, meta=_meta(args))
    write_summary_json(summary, _summary_path(args))
    s = result.summary
    print(f"{s['trials']} trials: {s['converged']} converged, {s['failed']} failed, {s['gated']} gated")
    print(f"  solution inequalities pass rate: {s['lemma3_pass_rate']}")
    print(f"  error bound pass rate (gated): {s['theorem1_pass_rate']}")
    return 0


def _parse_values(text: str, cast) -> List[Any]:
    try:
        return [cast(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise UsageError(f"bad value list '{text}': {e}") from e


def cmd_phase(args: argparse.Namespace) -> int:
    axes = tuple(part.strip() for part in args.axes.split(','))
    if axes not in PHASE_AXES:
        raise UsageError(f"--axes must be m,rank or lambda,epsilon, got '{args.axes}'")
    cfg = _experiment_config(args)
    casts = {'m': int, 'rank': int, 'lambda': float, 'epsilon': float}
    values1 = _parse_values(args.values1, casts[axes[0]])
    values2 = _parse_values(args.values2, casts[axes[1]])
    rows = phase_sweep(cfg, axes, values1, values2, args.threads)
    write_rows_csv(rows, PHASE_COLUMNS, args.out)
    write_summary_json({'config': cfg.to_dict(), 'cells': len(rows), 'meta': _meta(args)}, _summary_path(args))
    for row in rows:
        print(f"{row['axis1']}={row['value1']:<8} {row['axis2']}={row['value2']:<8} "
              f"success {row['successes']}/{row['trials']}")
    return 0


def _add_solver_flags(parser: argparse.ArgumentParser, defaults: bool = True):
    parser.add_argument('--max-iters', type=int, default=SOLVER_DEFAULTS['max_iters'] if defaults else None)
    parser.add_argument('--tol', type=float, default=SOLVER_DEFAULTS['tol'] if defaults else None)


def _add_campaign_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='JSON file mirroring ExperimentConfig')
    parser.add_argument('--seed', type=int, required=True)
    for name in ('n1', 'n2', 'm', 'rank', 'k', 'trials', 'ric-samples'):
        parser.add_argument(f'--{name}', type=int)
    parser.add_argument('--t', type=float)
    parser.add_argument('--lambda', dest='lam', type=float)
    parser.add_argument('--eps', type=float)
    parser.add_argument('--margin', type=float)
    parser.add_argument('--ensemble-kind', choices=ENSEMBLE_KINDS)
    parser.add_argument('--ensemble', help='ensemble file for --ensemble-kind custom-path')
    parser.add_argument('--noise-kind', choices=NOISE_KINDS)
    parser.add_argument('--per-trial-ensemble', action='store_true')
    _add_solver_flags(parser, defaults=False)
    parser.add_argument('--out', required=True, help='records CSV')
    parser.add_argument('--summary', help='summary JSON (default: next to --out)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='rnnm', description='Low-rank recovery by regularized nuclear norm minimization')
    parser.add_argument('--version', action='version', version=f'%(prog)s {VERSION}')
    parser.add_argument('--threads', type=int, default=default_threads(), help='campaign worker cap')
    parser.add_argument('--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate', help='write a seeded problem file')
    p.add_argument('--kind', choices=('matrix', 'sparse'), default='matrix')
    p.add_argument('--n1', type=int, default=CAMPAIGN_DEFAULTS['n1'])
    p.add_argument('--n2', type=int, default=CAMPAIGN_DEFAULTS['n2'])
    p.add_argument('--m', type=int, default=CAMPAIGN_DEFAULTS['m'])
    p.add_argument('--rank', type=int, default=CAMPAIGN_DEFAULTS['rank'])
    p.add_argument('--n', type=int, default=8, help='sparse: signal length')
    p.add_argument('--sparsity', type=int, default=1)
    p.add_argument('--lambda', dest='lam', type=float, default=CAMPAIGN_DEFAULTS['lambda'])
    p.add_argument('--eps', type=float, default=CAMPAIGN_DEFAULTS['epsilon'])
    p.add_argument('--ensemble-kind', choices=ENSEMBLE_KINDS, default=CAMPAIGN_DEFAULTS['ensemble_kind'])
    p.add_argument('--ensemble', help='ensemble file for --ensemble-kind custom-path')
    p.add_argument('--noise-kind', choices=NOISE_KINDS, default=CAMPAIGN_DEFAULTS['noise_kind'])
    p.add_argument('--ensemble-out', help='save the ensemble separately and reference it by path')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser('solve', help='solve a problem file')
    p.add_argument('--problem', required=True)
    p.add_argument('--solver', choices=SOLVER_NAMES, default='rnnm')
    _add_solver_flags(p)
    p.add_argument('--out')
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser('bounds', help='threshold, betas and error-bound constants')
    p.add_argument('--t', type=float, required=True)
    p.add_argument('--k', type=int, default=1)
    p.add_argument('--delta', type=float, required=True)
    p.add_argument('--lambda', dest='lam', type=float, default=CAMPAIGN_DEFAULTS['lambda'])
    p.add_argument('--eps', type=float, default=CAMPAIGN_DEFAULTS['epsilon'])
    p.add_argument('--out')
    p.set_defaults(handler=cmd_bounds)

    p = sub.add_parser('ric', help='restricted isometry constant of an ensemble or design')
    p.add_argument('--mode', choices=RIC_MODES, default='mc')
    p.add_argument('--k', type=int, required=True)
    p.add_argument('--samples', type=int, default=RIC_DEFAULTS['samples'])
    p.add_argument('--restarts', type=int, default=RIC_DEFAULTS['restarts'])
    p.add_argument('--steps', type=int, default=RIC_DEFAULTS['ascent_steps'])
    p.add_argument('--seed', type=int)
    p.add_argument('--ensemble')
    p.add_argument('--design', help='exact mode: JSON file with a design matrix A')
    p.add_argument('--out')
    p.set_defaults(handler=cmd_ric)

    p = sub.add_parser('verify', help='check a solution against the recovery guarantees')
    p.add_argument('--problem', required=True)
    p.add_argument('--solution', required=True)
    p.add_argument('--t', type=float, required=True)
    p.add_argument('--k', type=int, required=True)
    source = p.add_mutually_exclusive_group()
    source.add_argument('--delta', type=float)
    source.add_argument('--ric', help='RicEstimate JSON from the ric subcommand')
    source.add_argument('--ric-samples', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--margin', type=float, default=RIC_DEFAULTS['margin'])
    p.add_argument('--out')
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser('experiment', help='seeded verification campaign')
    _add_campaign_flags(p)
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser('phase', help='success fraction over an (m, rank) or (lambda, epsilon) grid')
    _add_campaign_flags(p)
    p.add_argument('--axes', default='m,rank')
    p.add_argument('--values1', required=True)
    p.add_argument('--values2', required=True)
    p.set_defaults(handler=cmd_phase)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"rnnm {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (RnnmError, OSError, json.JSONDecodeError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"rnnm {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
