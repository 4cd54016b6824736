"""
Convex programs for low-rank and sparse recovery

- solve_rnnm: min ||X||_* + (1/2 lam) ||b - A(X)||^2 (accelerated proximal gradient)
- solve_nnm_constrained: min ||X||_* s.t. ||b - A(X)|| <= eps (ADMM)
- solve_bpdn: min ||x||_1 + (1/2 lam) ||b - Ax||^2 (accelerated proximal gradient)
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from config import SOLVER_DEFAULTS
from rnnm_errors import ConvergenceError, DimensionError, DomainError
from rnnm_linalg import (
    MeasurementEnsemble,
    PathLike,
    adjoint_map,
    apply_map,
    as_dense,
    as_vector,
    frobenius_inner,
    nuclear_norm,
    op_norm_sq,
    soft_threshold,
    spectral_norm,
    svt,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = SOLVER_DEFAULTS['max_iters']
    tol: float = SOLVER_DEFAULTS['tol']
    stall_tol: float = SOLVER_DEFAULTS['stall_tol']
    stall_window: int = SOLVER_DEFAULTS['stall_window']
    stall_progress: float = SOLVER_DEFAULTS['stall_progress']
    lipschitz_safety: float = SOLVER_DEFAULTS['lipschitz_safety']
    power_iters: int = SOLVER_DEFAULTS['power_iters']
    seed: int = 0
    restart: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise DomainError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class RecoveryProblem:
    """Observations b = A(X) + n with noise budget epsilon and weight lam"""
    ensemble: MeasurementEnsemble
    b: np.ndarray
    lam: float
    epsilon: float = 0.0
    truth: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        b = as_vector(self.b, name='b')
        if b.shape[0] != self.ensemble.m:
            raise DimensionError(f"b has length {b.shape[0]}, ensemble has m={self.ensemble.m}")
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}")
        object.__setattr__(self, 'b', b)
        if self.truth is not None:
            truth = as_dense(self.truth, name='truth')
            if truth.shape != self.ensemble.shape:
                raise DimensionError(f"truth shape {truth.shape} does not match ensemble {self.ensemble.shape}")
            object.__setattr__(self, 'truth', truth)
        if self.noise is not None:
            noise = as_vector(self.noise, name='noise')
            if noise.shape[0] != self.ensemble.m:
                raise DimensionError(f"noise has length {noise.shape[0]}, expected {self.ensemble.m}")
            if np.linalg.norm(noise) > self.epsilon + 1e-12:
                raise DomainError(f"noise norm {np.linalg.norm(noise):.3g} exceeds epsilon={self.epsilon}")
            if self.truth is not None:
                gap = np.linalg.norm(apply_map(self.ensemble, self.truth) + noise - b)
                if gap > 1e-10 * max(1.0, np.linalg.norm(b)):
                    raise DomainError(f"b differs from A(truth) + noise by {gap:.3g}")
            object.__setattr__(self, 'noise', noise)

    def objective(self, X: np.ndarray) -> float:
        r = self.b - apply_map(self.ensemble, X)
        return nuclear_norm(X) + float(r @ r) / (2.0 * self.lam)

    def residual_norm(self, X: np.ndarray) -> float:
        return float(np.linalg.norm(self.b - apply_map(self.ensemble, X)))

    def noise_vector(self) -> Optional[np.ndarray]:
        """The realized noise b - A(truth), or the stored noise when no truth is known"""
        if self.truth is not None:
            return self.b - apply_map(self.ensemble, self.truth)
        return self.noise

    def with_lambda(self, lam: float) -> 'RecoveryProblem':
        return replace(self, lam=lam)

    def to_dict(self) -> Dict[str, Any]:
        doc = {
            'ensemble': self.ensemble.to_dict(),
            'b': [float(x) for x in self.b],
            'lambda': float(self.lam),
            'epsilon': float(self.epsilon),
        }
        if self.truth is not None:
            doc['truth'] = [[float(x) for x in row] for row in self.truth]
        if self.noise is not None:
            doc['noise'] = [float(x) for x in self.noise]
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], base_dir: Optional[Path] = None) -> 'RecoveryProblem':
        try:
            ens_doc = doc['ensemble']
            if isinstance(ens_doc, str):
                path = Path(ens_doc)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                ensemble = MeasurementEnsemble.load(path)
            else:
                ensemble = MeasurementEnsemble.from_dict(ens_doc)
            return cls(
                ensemble=ensemble,
                b=np.asarray(doc['b'], dtype=np.float64),
                lam=float(doc['lambda']),
                epsilon=float(doc.get('epsilon', 0.0)),
                truth=None if doc.get('truth') is None else np.asarray(doc['truth'], dtype=np.float64),
                noise=None if doc.get('noise') is None else np.asarray(doc['noise'], dtype=np.float64),
            )
        except KeyError as e:
            raise DomainError(f"problem document is missing {e}") from e

    @classmethod
    def load(cls, path: PathLike) -> 'RecoveryProblem':
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f), base_dir=Path(path).parent)

    def save(self, path: PathLike):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f)


@dataclass(frozen=True)
class SparseProblem:
    """BPDN instance: design A, observations b, weight lam, optional truth"""
    A: np.ndarray
    b: np.ndarray
    lam: float
    epsilon: float = 0.0
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        A = as_dense(self.A, name='design')
        b = as_vector(self.b, name='b')
        if A.shape[0] != b.shape[0]:
            raise DimensionError(f"design has {A.shape[0]} rows but b has length {b.shape[0]}")
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}")
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'b', b)
        if self.truth is not None:
            truth = as_vector(self.truth, name='truth')
            if truth.shape[0] != A.shape[1]:
                raise DimensionError(f"truth has length {truth.shape[0]}, design has {A.shape[1]} columns")
            object.__setattr__(self, 'truth', truth)

    def to_dict(self) -> Dict[str, Any]:
        doc = {
            'A': [[float(x) for x in row] for row in self.A],
            'b': [float(x) for x in self.b],
            'lambda': float(self.lam),
            'epsilon': float(self.epsilon),
        }
        if self.truth is not None:
            doc['truth'] = [float(x) for x in self.truth]
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'SparseProblem':
        try:
            return cls(
                A=np.asarray(doc['A'], dtype=np.float64),
                b=np.asarray(doc['b'], dtype=np.float64),
                lam=float(doc['lambda']),
                epsilon=float(doc.get('epsilon', 0.0)),
                truth=None if doc.get('truth') is None else np.asarray(doc['truth'], dtype=np.float64),
            )
        except KeyError as e:
            raise DomainError(f"sparse problem document is missing {e}") from e

    def save(self, path: PathLike):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f)


def load_problem(path: PathLike):
    """A RecoveryProblem, or a SparseProblem when the file carries a design matrix A"""
    with open(path, 'r') as f:
        doc = json.load(f)
    if 'A' in doc:
        return SparseProblem.from_dict(doc)
    return RecoveryProblem.from_dict(doc, base_dir=Path(path).parent)


@dataclass(frozen=True)
class OptimalityCertificate:
    """
    Subgradient test for the nuclear-norm programs

    G must satisfy ||G||_2 <= 1 and <G, X> = ||X||_*.
    """
    dual_spectral_norm: float
    alignment_gap: float
    tolerance: float
    nuclear_norm: float = 0.0

    @property
    def passed(self) -> bool:
        return (self.dual_spectral_norm <= 1.0 + self.tolerance
                and self.alignment_gap <= self.tolerance * max(1.0, self.nuclear_norm))

    @property
    def violation(self) -> float:
        """Largest scaled violation of the two conditions, 0 when both hold exactly"""
        return max(0.0, self.dual_spectral_norm - 1.0, self.alignment_gap / max(1.0, self.nuclear_norm))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'dual_spectral_norm': self.dual_spectral_norm,
            'alignment_gap': self.alignment_gap,
            'tolerance': self.tolerance,
            'passed': self.passed,
        }


@dataclass(frozen=True)
class SparseCertificate:
    """Subgradient test for BPDN: ||g||_inf <= 1 and <g, x> >= ||x||_1"""
    dual_sup_norm: float
    alignment_gap: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.dual_sup_norm <= 1.0 + self.tolerance and self.alignment_gap <= self.tolerance

    @property
    def violation(self) -> float:
        return max(0.0, self.dual_sup_norm - 1.0, self.alignment_gap)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'dual_sup_norm': self.dual_sup_norm,
            'alignment_gap': self.alignment_gap,
            'tolerance': self.tolerance,
            'passed': self.passed,
        }


@dataclass(frozen=True)
class SolverResult:
    solution: np.ndarray
    iterations: int
    final_objective: float
    objective_trace: Tuple[float, ...]
    converged: bool
    certificate: Any
    solver: str = 'rnnm'

    def to_dict(self) -> Dict[str, Any]:
        sol = self.solution
        return {
            'solver': self.solver,
            'solution': [[float(x) for x in row] for row in sol] if sol.ndim == 2 else [float(x) for x in sol],
            'iterations': self.iterations,
            'final_objective': self.final_objective,
            'converged': self.converged,
            'certificate': self.certificate.to_dict(),
            'objective_trace': [float(x) for x in self.objective_trace],
        }


def check_optimality(p: RecoveryProblem, X: Any, tol: float) -> OptimalityCertificate:
    """Evaluate G = A*(b - A(X)) / lam against the subgradient conditions at X"""
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    X = as_dense(X)
    G = adjoint_map(p.ensemble, p.b - apply_map(p.ensemble, X)) / p.lam
    return _matrix_certificate(G, X, tol)


def _matrix_certificate(G: np.ndarray, X: np.ndarray, tol: float) -> OptimalityCertificate:
    nuc = nuclear_norm(X)
    return OptimalityCertificate(
        dual_spectral_norm=spectral_norm(G),
        alignment_gap=nuc - frobenius_inner(G, X),
        tolerance=tol,
        nuclear_norm=nuc,
    )


def check_sparse_optimality(A: np.ndarray, b: np.ndarray, lam: float, x: np.ndarray, tol: float) -> SparseCertificate:
    g = A.T @ (b - A @ x) / lam
    return SparseCertificate(
        dual_sup_norm=float(np.max(np.abs(g))) if g.size else 0.0,
        alignment_gap=float(np.sum(np.abs(x)) - g @ x),
        tolerance=tol,
    )


def _certificate_improving(violations: List[float], window: int, progress: float) -> bool:
    """True when the last window violations beat everything before them by the fraction progress"""
    recent = min(violations[-window:])
    earlier = min(violations[:-window])
    return recent < (1.0 - progress) * earlier


def _accelerated_prox_grad(
    x0: np.ndarray,
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    prox: Callable[[np.ndarray, float], np.ndarray],
    step: float,
    certify: Callable[[np.ndarray], Any],
    opts: SolverOptions,
    label: str,
) -> Tuple[np.ndarray, int, List[float], Any, bool]:
    """
    FISTA with function-value restart

    A momentum step that raises the objective is discarded and replaced
    by a plain proximal-gradient step from the last accepted iterate, so
    the recorded objective sequence never increases.

    A flat objective alone does not stop the loop: after stall_window
    flat iterations it stops only if the certificate violation has not
    dropped by the fraction stall_progress over that window.
    """
    x = x0
    fx = objective(x)
    y = x
    t = 1.0
    trace = [fx]
    stalled = 0
    held = False
    certificate = certify(x)
    violations = [certificate.violation]
    iterations = 0
    if certificate.passed:
        return x, iterations, trace, certificate, True

    for iterations in range(1, opts.max_iters + 1):
        candidate = prox(y - step * gradient(y), step)
        f_candidate = objective(candidate)
        moved = True
        if opts.restart and f_candidate > fx:
            t = 1.0
            candidate = prox(x - step * gradient(x), step)
            f_candidate = objective(candidate)
            if f_candidate > fx:
                # plain prox-grad cannot increase F beyond round-off
                if held:
                    logger.debug(f"{label}: no descent from the current iterate at iteration {iterations}")
                    break
                f_candidate = fx
                candidate = x
                moved = False
            y_next = candidate
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y_next = candidate + ((t - 1.0) / t_next) * (candidate - x)
            t = t_next

        if not np.all(np.isfinite(candidate)):
            raise ConvergenceError(f"{label}: non-finite iterate at iteration {iterations}")

        held = not moved
        if moved:
            change = abs(fx - f_candidate) / max(1.0, abs(fx))
            stalled = stalled + 1 if change < opts.stall_tol else 0
        x, fx, y = candidate, f_candidate, y_next
        trace.append(fx)

        certificate = certify(x)
        violations.append(certificate.violation)
        if certificate.passed:
            break
        if stalled >= opts.stall_window:
            if _certificate_improving(violations, opts.stall_window, opts.stall_progress):
                stalled = 0
            else:
                logger.debug(f"{label}: objective stalled at iteration {iterations}")
                break
        if iterations % SOLVER_DEFAULTS['log_every'] == 0:
            logger.debug(f"{label}: iteration {iterations}, objective {fx:.12g}")

    return x, iterations, trace, certificate, certificate.passed


def solve_rnnm(p: RecoveryProblem, opts: Optional[SolverOptions] = None) -> SolverResult:
    """
    Regularized nuclear norm minimization

    Minimizes ||X||_* + (1/2 lam) ||b - A(X)||_2^2 from X0 = 0 with the
    constant step lam / (safety * ||A||^2).
    """
    opts = opts or SolverOptions()
    ens = p.ensemble
    lipschitz = opts.lipschitz_safety * op_norm_sq(ens, opts.power_iters, opts.seed)
    X0 = np.zeros(ens.shape)
    if lipschitz == 0.0:
        cert = check_optimality(p, X0, opts.tol)
        return SolverResult(X0, 0, p.objective(X0), (p.objective(X0),), cert.passed, cert, 'rnnm')
    step = p.lam / lipschitz

    X, iterations, trace, cert, converged = _accelerated_prox_grad(
        X0,
        objective=p.objective,
        gradient=lambda X: -adjoint_map(ens, p.b - apply_map(ens, X)) / p.lam,
        prox=lambda Z, s: svt(Z, s),
        step=step,
        certify=lambda X: check_optimality(p, X, opts.tol),
        opts=opts,
        label='rnnm',
    )
    final = p.objective(X)
    logger.info(f"rnnm finished: {iterations} iterations, objective {final:.10g}, converged={converged}")
    return SolverResult(X, iterations, final, tuple(trace), converged, cert, 'rnnm')


def solve_bpdn(A: Any, b: Any, lam: float, opts: Optional[SolverOptions] = None) -> SolverResult:
    """Basis pursuit denoising: min ||x||_1 + (1/2 lam) ||b - Ax||_2^2"""
    opts = opts or SolverOptions()
    A = as_dense(A, name='design')
    b = as_vector(b, name='b')
    if A.shape[0] != b.shape[0]:
        raise DimensionError(f"design has {A.shape[0]} rows but b has length {b.shape[0]}")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")

    def objective(x):
        r = b - A @ x
        return float(np.sum(np.abs(x)) + r @ r / (2.0 * lam))

    x0 = np.zeros(A.shape[1])
    lipschitz = opts.lipschitz_safety * float(np.linalg.norm(A, 2) ** 2)
    if lipschitz == 0.0:
        cert = check_sparse_optimality(A, b, lam, x0, opts.tol)
        return SolverResult(x0, 0, objective(x0), (objective(x0),), cert.passed, cert, 'bpdn')
    step = lam / lipschitz

    x, iterations, trace, cert, converged = _accelerated_prox_grad(
        x0,
        objective=objective,
        gradient=lambda x: -A.T @ (b - A @ x) / lam,
        prox=lambda z, s: soft_threshold(z, s),
        step=step,
        certify=lambda x: check_sparse_optimality(A, b, lam, x, opts.tol),
        opts=opts,
        label='bpdn',
    )
    final = objective(x)
    logger.info(f"bpdn finished: {iterations} iterations, objective {final:.10g}, converged={converged}")
    return SolverResult(x, iterations, final, tuple(trace), converged, cert, 'bpdn')


class ResidualBallProjector:
    """
    Euclidean projection onto C = {X : ||b - A(X)||_2 <= eps}

    Works in the singular coordinates of the flattened operator: the
    component of X in the null space of A is untouched, and the row-space
    coordinates w solve min ||w' - w|| s.t. ||S w' - c|| <= eps_eff with a
    single Lagrange multiplier.
    """

    def __init__(self, ens: MeasurementEnsemble, b: np.ndarray, epsilon: float):
        self.shape = ens.shape
        U, s, Vt = np.linalg.svd(ens.operator, full_matrices=False)
        keep = s > 1e-12 * max(1.0, s[0] if s.size else 0.0)
        self.U, self.s, self.Vt = U[:, keep], s[keep], Vt[keep]
        self.c = self.U.T @ b
        outside = b - self.U @ self.c
        floor_sq = float(outside @ outside)
        budget_sq = epsilon * epsilon - floor_sq
        if budget_sq < -1e-12 * max(1.0, epsilon * epsilon):
            raise DomainError(
                f"constraint set is empty: b lies {np.sqrt(floor_sq):.6g} from the range of A, epsilon={epsilon}")
        self.radius = float(np.sqrt(max(budget_sq, 0.0)))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        x = X.ravel()
        w = self.Vt @ x
        r = self.s * w - self.c
        if float(np.linalg.norm(r)) <= self.radius:
            return X.copy()
        if self.radius == 0.0:
            w_new = self.c / self.s
        else:
            s2 = self.s * self.s

            def excess(mu):
                return float(np.linalg.norm(r / (1.0 + mu * s2))) - self.radius

            upper = 1.0
            while excess(upper) > 0:
                upper *= 2.0
            mu = brentq(excess, 0.0, upper, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
            if excess(mu) > 0:
                mu = np.nextafter(mu, np.inf)
            w_new = (w + mu * self.s * self.c) / (1.0 + mu * s2)
        return (x + self.Vt.T @ (w_new - w)).reshape(self.shape)


def solve_nnm_constrained(p: RecoveryProblem, opts: Optional[SolverOptions] = None) -> SolverResult:
    """
    Constrained nuclear norm minimization by ADMM

    Splits X = Y with Y confined to the residual ball; X-steps are svt,
    Y-steps are exact projections, and the returned solution is the
    feasible Y iterate.
    """
    opts = opts or SolverOptions()
    ens = p.ensemble
    project = ResidualBallProjector(ens, p.b, p.epsilon)
    rho = SOLVER_DEFAULTS['admm_rho']
    balance = SOLVER_DEFAULTS['admm_balance']
    scale = SOLVER_DEFAULTS['admm_scale']

    Y = project(np.zeros(ens.shape))
    U = np.zeros(ens.shape)
    trace = [nuclear_norm(Y)]
    certificate = _matrix_certificate(np.zeros(ens.shape), Y, opts.tol)
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_iters + 1):
        X = svt(Y - U, 1.0 / rho)
        Y_prev = Y
        Y = project(X + U)
        U = U + X - Y
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ConvergenceError(f"nnm: non-finite iterate at iteration {iterations}")

        primal = float(np.linalg.norm(X - Y))
        dual = rho * float(np.linalg.norm(Y - Y_prev))
        trace.append(nuclear_norm(Y))

        certificate = _matrix_certificate(-rho * U, Y, opts.tol)
        scale_ref = max(1.0, float(np.linalg.norm(Y)))
        if primal <= opts.tol * scale_ref and dual <= opts.tol * scale_ref and certificate.passed:
            converged = True
            break

        if primal > balance * dual and rho < SOLVER_DEFAULTS['admm_rho_max']:
            rho *= scale
            U /= scale
        elif dual > balance * primal and rho > SOLVER_DEFAULTS['admm_rho_min']:
            rho /= scale
            U *= scale
        if iterations % SOLVER_DEFAULTS['log_every'] == 0:
            logger.debug(f"nnm: iteration {iterations}, objective {trace[-1]:.12g}, rho {rho:.3g}")

    excess = p.residual_norm(Y) - p.epsilon
    if excess > SOLVER_DEFAULTS['feasibility_tol']:
        logger.warning(f"nnm: solution violates the residual ball by {excess:.3g}")
    final = nuclear_norm(Y)
    logger.info(f"nnm finished: {iterations} iterations, objective {final:.10g}, converged={converged}")
    return SolverResult(Y, iterations, final, tuple(trace), converged, certificate, 'nnm')


SOLVERS = {
    'rnnm': solve_rnnm,
    'nnm': solve_nnm_constrained,
}


def solve(p: RecoveryProblem, opts: Optional[SolverOptions] = None, solver: str = 'rnnm') -> SolverResult:
    if solver not in SOLVERS:
        raise DomainError(f"unknown matrix solver '{solver}', expected one of {sorted(SOLVERS)}")
    return SOLVERS[solver](p, opts)
