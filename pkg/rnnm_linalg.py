"""
Dense linear-algebra primitives for low-rank matrix recovery
SVD, nuclear-norm machinery, the trace measurement map and its adjoint
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import numpy as np

from rnnm_errors import ConvergenceError, DimensionError, DomainError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def as_dense(X: Any, name: str = 'matrix') -> np.ndarray:
    """Validate and return X as a finite 2-D float64 array"""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def as_vector(v: Any, name: str = 'vector') -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def _condition_report(X: np.ndarray) -> str:
    finite = bool(np.all(np.isfinite(X)))
    frob = float(np.linalg.norm(X)) if finite else float('nan')
    try:
        cond = float(np.linalg.cond(X)) if finite else float('nan')
    except np.linalg.LinAlgError:
        cond = float('inf')
    return f"shape={X.shape}, finite={finite}, frobenius={frob:.6g}, cond={cond:.6g}"


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD X = sum_i s_i u_i v_i^T with p = min(n1, n2) triplets"""
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    def recompose(self, count: Optional[int] = None) -> np.ndarray:
        p = len(self.singular_values) if count is None else count
        U = self.left_vectors[:, :p]
        V = self.right_vectors[:, :p]
        return (U * self.singular_values[:p]) @ V.T


def svd(X: Any) -> SvdFactors:
    """
    Thin SVD with a fixed sign convention

    The first nonzero coordinate of each left singular vector is made
    nonnegative (the paired right vector is flipped with it).

    Raises:
        ConvergenceError: LAPACK did not converge
    """
    X = as_dense(X)
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"SVD did not converge ({e}): {_condition_report(X)}") from e

    V = Vt.T.copy()
    U = U.copy()
    for j in range(U.shape[1]):
        nonzero = np.flatnonzero(U[:, j])
        if nonzero.size and U[nonzero[0], j] < 0:
            U[:, j] = -U[:, j]
            V[:, j] = -V[:, j]
    return SvdFactors(U, np.maximum(s, 0.0), V)


def singular_values(X: Any) -> np.ndarray:
    X = as_dense(X)
    try:
        return np.linalg.svd(X, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"SVD did not converge ({e}): {_condition_report(X)}") from e


def nuclear_norm(X: Any) -> float:
    return float(np.sum(singular_values(X)))


def spectral_norm(X: Any) -> float:
    return float(singular_values(X)[0])


def frobenius_inner(X: np.ndarray, Y: np.ndarray) -> float:
    return float(np.sum(X * Y))


def truncate_rank(X: Any, k: int) -> np.ndarray:
    """Best rank-k approximation X_[k] in Frobenius norm"""
    if k < 1:
        raise DomainError(f"rank must be >= 1, got {k}")
    X = as_dense(X)
    if k >= min(X.shape):
        return X.copy()
    factors = svd(X)
    s = factors.singular_values
    # already rank <= k: hand back X itself rather than a round-off copy
    if s[k] <= 1e-14 * s[0]:
        return X.copy()
    return factors.recompose(k)


def split_spectrum(X: Any, k: int):
    """Return (X_E, X_Ec) with E the indices of the k largest singular values"""
    factors = svd(X)
    head = factors.recompose(min(k, len(factors.singular_values)))
    return head, as_dense(X) - head


def svt(Y: Any, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal map of tau * ||.||_*"""
    if tau < 0:
        raise DomainError(f"threshold must be nonnegative, got {tau}")
    Y = as_dense(Y)
    if tau == 0:
        return Y.copy()
    factors = svd(Y)
    shrunk = np.maximum(factors.singular_values - tau, 0.0)
    return (factors.left_vectors * shrunk) @ factors.right_vectors.T


def soft_threshold(v: Any, tau: float) -> np.ndarray:
    """Componentwise shrinkage, the proximal map of tau * ||.||_1"""
    if tau < 0:
        raise DomainError(f"threshold must be nonnegative, got {tau}")
    v = np.asarray(v, dtype=np.float64)
    if tau == 0:
        return v.copy()
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


@dataclass(frozen=True)
class MeasurementEnsemble:
    """
    A stack of m measurement matrices A^(i), each n1 x n2

    The map is A(X)_i = tr(X^T A^(i)). The stack is stored explicitly,
    together with its m x (n1*n2) row-major flattening used for every
    apply/adjoint product. Instances are read-only.
    """
    matrices: np.ndarray
    operator: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        stack = np.array(self.matrices, dtype=np.float64)
        if stack.ndim != 3 or min(stack.shape) < 1:
            raise DimensionError(f"ensemble must be an (m, n1, n2) stack, got shape {stack.shape}")
        if not np.all(np.isfinite(stack)):
            raise DomainError("ensemble has non-finite entries")
        stack.setflags(write=False)
        flat = stack.reshape(stack.shape[0], -1).copy()
        flat.setflags(write=False)
        object.__setattr__(self, 'matrices', stack)
        object.__setattr__(self, 'operator', flat)

    @property
    def m(self) -> int:
        return self.matrices.shape[0]

    @property
    def n1(self) -> int:
        return self.matrices.shape[1]

    @property
    def n2(self) -> int:
        return self.matrices.shape[2]

    @property
    def shape(self):
        return (self.n1, self.n2)

    @classmethod
    def from_matrices(cls, matrices: Iterable[Any]) -> 'MeasurementEnsemble':
        mats = [as_dense(A, name=f"measurement {i}") for i, A in enumerate(matrices)]
        if not mats:
            raise DimensionError("ensemble needs at least one measurement")
        shapes = {A.shape for A in mats}
        if len(shapes) != 1:
            raise DimensionError(f"measurement matrices disagree in shape: {sorted(shapes)}")
        return cls(np.stack(mats))

    @classmethod
    def coordinate(cls, n1: int, n2: int) -> 'MeasurementEnsemble':
        """m = n1*n2 unit-entry matrices; the map is row-major vectorization"""
        return cls(np.eye(n1 * n2).reshape(n1 * n2, n1, n2))

    def scaled(self, c: float) -> 'MeasurementEnsemble':
        return MeasurementEnsemble(c * self.matrices)

    def permuted(self, order: Sequence[int]) -> 'MeasurementEnsemble':
        return MeasurementEnsemble(self.matrices[np.asarray(order)])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'm': self.m,
            'n1': self.n1,
            'n2': self.n2,
            'matrices': [[float(x) for x in row] for row in self.operator],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'MeasurementEnsemble':
        try:
            m, n1, n2 = int(doc['m']), int(doc['n1']), int(doc['n2'])
            rows = doc['matrices']
        except (KeyError, TypeError, ValueError) as e:
            raise DomainError(f"malformed ensemble document: {e}") from e
        if len(rows) != m:
            raise DimensionError(f"ensemble declares m={m} but lists {len(rows)} matrices")
        stack = np.asarray(rows, dtype=np.float64)
        if stack.shape != (m, n1 * n2):
            raise DimensionError(f"ensemble matrices must hold {n1 * n2} entries each, got {stack.shape}")
        return cls(stack.reshape(m, n1, n2))

    @classmethod
    def load(cls, path: PathLike) -> 'MeasurementEnsemble':
        with open(path, 'r') as f:
            return cls.from_dict(json.load(f))

    def save(self, path: PathLike):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f)


def apply_map(ens: MeasurementEnsemble, X: Any) -> np.ndarray:
    """A(X): the Frobenius inner products <A^(i), X>"""
    X = as_dense(X)
    if X.shape != ens.shape:
        raise DimensionError(f"matrix shape {X.shape} does not match ensemble {ens.shape}")
    return ens.operator @ X.ravel()


def adjoint_map(ens: MeasurementEnsemble, y: Any) -> np.ndarray:
    """A*(y) = sum_i y_i A^(i)"""
    y = as_vector(y, name='measurement vector')
    if y.shape[0] != ens.m:
        raise DimensionError(f"vector length {y.shape[0]} does not match m={ens.m}")
    return (ens.operator.T @ y).reshape(ens.shape)


def op_norm_sq(ens: MeasurementEnsemble, iters: int = 200, seed: int = 0) -> float:
    """
    Power-iteration estimate of ||A||^2, the top eigenvalue of A*A

    Returns the last value of the (nondecreasing) Rayleigh-quotient sequence.
    """
    if iters < 1:
        raise DomainError(f"iters must be >= 1, got {iters}")
    M = ens.operator
    x = np.random.default_rng(seed).standard_normal(M.shape[1])
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iters):
        y = M.T @ (M @ x)
        quotient = float(x @ y)
        estimate = max(estimate, quotient)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        x = y / norm
    return estimate


def derive_seed(*parts: Any) -> int:
    """64-bit sub-seed from BLAKE2b over the canonical JSON of parts"""
    payload = json.dumps(list(parts), sort_keys=True, separators=(',', ':')).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), 'big')


def rng_for(*parts: Any) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
