"""
Restricted isometry constants

Exact computation for sparse vectors (support enumeration) and honest
lower bounds for matrix maps (Monte-Carlo sampling, projected ascent).
"""

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from config import RIC_DEFAULTS
from rnnm_errors import DomainError, SizeError
from rnnm_linalg import (
    MeasurementEnsemble,
    PathLike,
    apply_map,
    as_dense,
    op_norm_sq,
    rng_for,
    truncate_rank,
)
from rnnm_theory import rip_threshold

logger = logging.getLogger(__name__)

EXACT = 'exact-enumeration'
MONTE_CARLO = 'monte-carlo'
MC_ASCENT = 'mc-plus-ascent'


@dataclass(frozen=True)
class RicEstimate:
    order: int
    value: float
    method: str
    samples: int = 0

    @property
    def is_exact(self) -> bool:
        return self.method == EXACT

    @property
    def is_lower_bound(self) -> bool:
        return not self.is_exact

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc.update(is_exact=self.is_exact, is_lower_bound=self.is_lower_bound)
        return doc

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'RicEstimate':
        try:
            method = doc['method']
            if method not in (EXACT, MONTE_CARLO, MC_ASCENT):
                raise DomainError(f"unknown RIC method '{method}'")
            return cls(int(doc['order']), float(doc['value']), method, int(doc.get('samples', 0)))
        except KeyError as e:
            raise DomainError(f"RIC document is missing {e}") from e

    @classmethod
    def load(cls, path: PathLike) -> 'RicEstimate':
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))


def ric_order(t: float, k: int, n1: Optional[int] = None, n2: Optional[int] = None) -> int:
    """ceil(t k), capped at min(n1, n2) when the dimensions are given"""
    order = max(1, math.ceil(t * k - 1e-9))
    if n1 is not None and n2 is not None:
        order = min(order, n1, n2)
    return order


def exact_sparse_ric(A: Any, k: int) -> RicEstimate:
    """
    delta_k of a design matrix by enumerating all k-column supports

    max over |S| = k of max(lambda_max(A_S^T A_S) - 1, 1 - lambda_min(A_S^T A_S))
    """
    A = as_dense(A, name='design')
    n = A.shape[1]
    if k < 1 or k > n:
        raise DomainError(f"order must lie in [1, {n}], got {k}")
    if n > RIC_DEFAULTS['exact_max_n'] or k > RIC_DEFAULTS['exact_max_k']:
        raise SizeError(f"exact enumeration is capped at n <= {RIC_DEFAULTS['exact_max_n']}, "
                        f"k <= {RIC_DEFAULTS['exact_max_k']} (got n={n}, k={k})")
    gram = A.T @ A
    worst = 0.0
    for S in itertools.combinations(range(n), k):
        eig = np.linalg.eigvalsh(gram[np.ix_(S, S)])
        worst = max(worst, eig[-1] - 1.0, 1.0 - eig[0])
    count = math.comb(n, k)
    return RicEstimate(order=k, value=float(worst), method=EXACT, samples=count)


def _rank_factors(rng: np.random.Generator, n1: int, n2: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    # column by column so the first j columns do not depend on k
    G = np.empty((n1, k))
    H = np.empty((n2, k))
    for c in range(k):
        G[:, c] = rng.standard_normal(n1)
        H[:, c] = rng.standard_normal(n2)
    return G, H


def _sample_quotients(ens: MeasurementEnsemble, k: int, samples: int, seed: int) -> np.ndarray:
    """
    Rayleigh quotients ||A(X)||^2 for nested unit-norm samples

    Row i holds the quotients of the rank-1..k samples built from the
    first 1..k factor columns of sample i.
    """
    n1, n2 = ens.shape
    quotients = np.empty((samples, k))
    for i in range(samples):
        G, H = _rank_factors(rng_for('ric', seed, i), n1, n2, k)
        for j in range(1, k + 1):
            X = G[:, :j] @ H[:, :j].T
            X /= np.linalg.norm(X)
            y = apply_map(ens, X)
            quotients[i, j - 1] = float(y @ y)
    return quotients


def mc_matrix_ric(ens: MeasurementEnsemble, k: int, samples: int = RIC_DEFAULTS['samples'], seed: int = 0) -> RicEstimate:
    """
    Monte-Carlo lower bound on delta_k of a matrix map

    Samples X = G H^T / ||G H^T||_F with Gaussian factors; lower-rank
    samples reuse the leading factor columns, so the estimate is
    nondecreasing both in the sample count and in k.
    """
    if k < 1 or k > min(ens.shape):
        raise DomainError(f"order must lie in [1, {min(ens.shape)}], got {k}")
    if samples < 1:
        raise DomainError(f"samples must be positive, got {samples}")
    q = _sample_quotients(ens, k, samples, seed)
    value = float(np.max(np.abs(q - 1.0)))
    logger.debug(f"mc ric: order {k}, {samples} samples, value {value:.6g}")
    return RicEstimate(order=k, value=value, method=MONTE_CARLO, samples=samples)


def _unit_rank(X: np.ndarray, k: int) -> Optional[np.ndarray]:
    Z = truncate_rank(X, k)
    norm = np.linalg.norm(Z)
    if norm == 0.0:
        return None
    return Z / norm


def _ascend(ens: MeasurementEnsemble, k: int, X: np.ndarray, steps: int, step: float, sign: float) -> float:
    """Projected gradient ascent (sign=+1) or descent (sign=-1) of ||A(X)||^2 on the unit rank-k set"""
    M = ens.operator

    def f(Z):
        y = apply_map(ens, Z)
        return float(y @ y)

    best = f(X)
    for _ in range(steps):
        grad = 2.0 * (M.T @ (M @ X.ravel())).reshape(ens.shape)
        candidate = _unit_rank(X + sign * step * grad, k)
        if candidate is not None:
            value = f(candidate)
            if sign * (value - best) > 0:
                X, best = candidate, value
                continue
        step *= 0.5
        if step < 1e-16:
            break
    return best


def ascent_refine_ric(
    ens: MeasurementEnsemble,
    k: int,
    init: Any,
    steps: int = RIC_DEFAULTS['ascent_steps'],
) -> RicEstimate:
    """
    Sharpen a lower bound on delta_k from a rank-k, unit-norm start

    Runs projected ascent toward the max of ||A(X)||^2 and projected
    descent toward its min; non-improving steps are rejected with step
    halving, so the result is never below the value at init.
    """
    init = as_dense(init, name='init')
    if init.shape != ens.shape:
        raise DomainError(f"init shape {init.shape} does not match ensemble {ens.shape}")
    norm = np.linalg.norm(init)
    if abs(norm - 1.0) > 1e-8:
        raise DomainError(f"init must have unit Frobenius norm, got {norm:.6g}")
    if k < 1 or np.linalg.matrix_rank(init) > k:
        raise DomainError(f"init must have rank <= {k}")
    lipschitz = op_norm_sq(ens)
    step = RIC_DEFAULTS['ascent_step'] / lipschitz if lipschitz > 0 else 0.0
    f_max = _ascend(ens, k, init, steps, step, +1.0)
    f_min = _ascend(ens, k, init, steps, step, -1.0)
    value = max(f_max - 1.0, 1.0 - f_min)
    return RicEstimate(order=k, value=float(value), method=MC_ASCENT, samples=1)


def mc_ascent_ric(
    ens: MeasurementEnsemble,
    k: int,
    samples: int = RIC_DEFAULTS['samples'],
    seed: int = 0,
    restarts: int = RIC_DEFAULTS['restarts'],
    steps: int = RIC_DEFAULTS['ascent_steps'],
) -> RicEstimate:
    """Monte-Carlo sampling followed by ascent from the most extreme samples"""
    if k < 1 or k > min(ens.shape):
        raise DomainError(f"order must lie in [1, {min(ens.shape)}], got {k}")
    quotients = _sample_quotients(ens, k, samples, seed)
    value = float(np.max(np.abs(quotients - 1.0)))
    order = np.argsort(-np.abs(quotients[:, k - 1] - 1.0), kind='stable')[:restarts]
    n1, n2 = ens.shape
    for i in order:
        G, H = _rank_factors(rng_for('ric', seed, int(i)), n1, n2, k)
        X = G @ H.T
        X /= np.linalg.norm(X)
        refined = ascent_refine_ric(ens, k, X, steps)
        value = max(value, refined.value)
    logger.debug(f"mc+ascent ric: order {k}, {samples} samples, {len(order)} restarts, value {value:.6g}")
    return RicEstimate(order=k, value=value, method=MC_ASCENT, samples=samples)


def ric_gate(estimate: RicEstimate, t: float, margin: float = RIC_DEFAULTS['margin']) -> Tuple[bool, float]:
    """
    Decide whether the RIC condition may be assumed

    Lower bounds are inflated by margin; exact values are used as is.
    Returns (passed, delta_used) with delta_used floored at 1e-12.
    """
    delta = estimate.value + (margin if estimate.is_lower_bound else 0.0)
    delta = max(delta, 1e-12)
    return delta < rip_threshold(t), delta
