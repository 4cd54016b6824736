"""
Closed-form recovery guarantees for regularized nuclear norm minimization

Evaluates the sharp RIC threshold, the beta constants, the error-bound
constants C1..C4, and checks the solution inequalities and error bounds
against solver output.
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from config import THEORY_TOLERANCES
from rnnm_errors import ConvergenceError, DomainError, MembershipError, SizeError
from rnnm_linalg import (
    MeasurementEnsemble,
    apply_map,
    as_dense,
    as_vector,
    nuclear_norm,
    split_spectrum,
)
from rnnm_solvers import RecoveryProblem

logger = logging.getLogger(__name__)

VERIFIED = 'verified'
PRECONDITION_UNMET = 'precondition-unmet'

# Earlier sufficient RIP conditions for constrained NNM: (order multiple, bound, label)
KNOWN_CONDITIONS = (
    (4, math.sqrt(2.0) - 1.0, 'delta_4k < sqrt(2) - 1'),
    (4, 0.558, 'delta_4k < 0.558'),
    (3, 0.4721, 'delta_3k < 0.4721'),
    (2, 0.4931, 'delta_2k < 0.4931'),
    (2, 0.5, 'delta_2k < 1/2'),
    (1, 1.0 / 3.0, 'delta_k < 1/3'),
)


def _within(lhs: float, rhs: float) -> bool:
    slack = THEORY_TOLERANCES['abs'] + THEORY_TOLERANCES['rel'] * max(abs(lhs), abs(rhs))
    return lhs <= rhs + slack


@dataclass(frozen=True)
class TheoryParams:
    t: float
    k: int
    delta: float
    lam: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.t > 1:
            raise DomainError(f"t must exceed 1, got {self.t}")
        if self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        if not 0 < self.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}")

    @property
    def condition_ok(self) -> bool:
        return self.delta < rip_threshold(self.t)


@dataclass(frozen=True)
class TheoryBounds:
    beta1: float
    beta2: float
    c1: float
    c2: float
    c3: Optional[float]
    c4: Optional[float]
    condition_ok: bool
    beta2_lt_one: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def rip_threshold(t: float) -> float:
    """The sharp bound sqrt((t - 1) / t) on delta_tk"""
    if not t > 1:
        raise DomainError(f"t must exceed 1, got {t}")
    return math.sqrt((t - 1.0) / t)


def threshold_report(t: float) -> Dict[str, Any]:
    """
    Threshold on delta_tk for a given t

    For t < 4/3 the earlier small-t threshold t / (4 - t) is listed as
    well; it is not backed by the bounds verified here.
    """
    report = {'t': t, 'sharp': rip_threshold(t), 'regime': 'sharp' if t >= 4.0 / 3.0 else 'small-t'}
    if t < 4.0 / 3.0:
        report['small_t'] = t / (4.0 - t)
    return report


def compare_conditions(delta_by_order: Dict[int, float], k: int) -> List[Dict[str, Any]]:
    """Which earlier sufficient conditions hold given RIC values keyed by order"""
    rows = []
    for multiple, bound, label in KNOWN_CONDITIONS:
        order = multiple * k
        delta = delta_by_order.get(order)
        rows.append({
            'condition': label,
            'order': order,
            'bound': bound,
            'delta': delta,
            'holds': None if delta is None else bool(delta < bound),
        })
    return rows


def betas(delta: float, t: float) -> Tuple[float, float]:
    """beta1 = 2 / ((1 - d) sqrt(1 + d)), beta2 = d / sqrt((1 - d^2)(t - 1))"""
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if not t > 1:
        raise DomainError(f"t must exceed 1, got {t}")
    beta1 = 2.0 / ((1.0 - delta) * math.sqrt(1.0 + delta))
    beta2 = delta / math.sqrt((1.0 - delta * delta) * (t - 1.0))
    return beta1, beta2


def theorem1_constants(p: TheoryParams) -> TheoryBounds:
    """
    Error-bound constants C1..C4

    C4 keeps the inverse factor (sqrt(k) beta1 lam + eps)^-1 in its
    denominator, i.e. it multiplies the numerator by (sqrt(k) beta1 lam + eps).
    C3 and C4 are None when beta2 >= 1.
    """
    beta1, beta2 = betas(p.delta, p.t)
    rk = math.sqrt(p.k)
    lam, eps = p.lam, p.epsilon
    a = rk * beta1 * lam + eps

    c1 = 2.0 * lam / a
    c2 = 2.0 * rk * beta1 * lam + 2.0 * eps
    beta2_lt_one = beta2 < 1.0 - THEORY_TOLERANCES['beta2_boundary']
    c3 = c4 = None
    if beta2_lt_one:
        c3 = ((2.0 * rk * beta1 * (2.0 * rk + 1.0 + beta2) * lam
               + 2.0 * (rk * beta2 + 2.0 * beta2 + rk) * eps)
              / (p.k * beta1 * (1.0 - beta2) * lam))
        c4 = ((2.0 * (p.k + rk) * beta1 * lam + (beta2 + 2.0 * rk - rk * beta2) * eps)
              / (rk * (1.0 - beta2) * lam * (1.0 / a)))
    return TheoryBounds(beta1, beta2, c1, c2, c3, c4, p.condition_ok, beta2_lt_one)


@dataclass(frozen=True)
class Lemma3Report:
    map_norm: float
    h_head_nuclear: float
    h_tail_nuclear: float
    x_tail_nuclear: float
    lhs5: float
    rhs5: float
    lhs6: float
    rhs6: float
    pass5: bool
    pass6: bool
    noise_within_budget: bool

    @property
    def passed(self) -> bool:
        return self.pass5 and self.pass6

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['passed'] = self.passed
        return doc


def check_lemma3(p: RecoveryProblem, Xsharp: Any, k: int) -> Lemma3Report:
    """
    Both sides of the solution inequalities for H = X# - X with E = [k]

        (5) ||A(H)||^2 - 2 eps ||A(H)|| <= 2 lam (||H_E||_* - ||H_Ec||_* + 2 ||X_Ec||_*)
        (6) ||H_Ec||_* <= ||H_E||_* + 2 ||X_Ec||_* + (eps / lam) ||A(H)||
    """
    if p.truth is None:
        raise DomainError("lemma check needs the ground truth matrix")
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    Xsharp = as_dense(Xsharp, name='solution')
    H = Xsharp - p.truth
    map_norm = float(np.linalg.norm(apply_map(p.ensemble, H)))
    H_head, H_tail = split_spectrum(H, k)
    _, X_tail = split_spectrum(p.truth, k)
    h_head = nuclear_norm(H_head)
    h_tail = nuclear_norm(H_tail)
    x_tail = nuclear_norm(X_tail)
    eps, lam = p.epsilon, p.lam

    lhs5 = map_norm ** 2 - 2.0 * eps * map_norm
    rhs5 = 2.0 * lam * (h_head - h_tail + 2.0 * x_tail)
    lhs6 = h_tail
    rhs6 = h_head + 2.0 * x_tail + (eps / lam) * map_norm
    noise = p.noise_vector()
    within = noise is None or float(np.linalg.norm(noise)) <= eps + 1e-12
    return Lemma3Report(map_norm, h_head, h_tail, x_tail, lhs5, rhs5, lhs6, rhs6,
                        _within(lhs5, rhs5), _within(lhs6, rhs6), within)


@dataclass(frozen=True)
class Lemma2Report:
    lhs: float
    rhs: float
    condition_ok: bool
    holds: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def check_lemma2(ens: MeasurementEnsemble, H: Any, k: int, params: TheoryParams) -> Lemma2Report:
    """||H_E||_F <= beta1 ||A(H)|| + beta2 ||H_Ec||_* / sqrt(k) with E = [k]"""
    H = as_dense(H)
    beta1, beta2 = betas(params.delta, params.t)
    head, tail = split_spectrum(H, k)
    lhs = float(np.linalg.norm(head))
    rhs = beta1 * float(np.linalg.norm(apply_map(ens, H))) + beta2 * nuclear_norm(tail) / math.sqrt(k)
    return Lemma2Report(lhs, rhs, params.condition_ok, _within(lhs, rhs))


@dataclass(frozen=True)
class Theorem1Report:
    status: str
    reason: str = ''
    tail_norm: Optional[float] = None
    lhs8: Optional[float] = None
    rhs8: Optional[float] = None
    lhs9: Optional[float] = None
    rhs9: Optional[float] = None
    bounds: Optional[TheoryBounds] = None

    @property
    def verified(self) -> bool:
        return self.status == VERIFIED

    @property
    def pass8(self) -> Optional[bool]:
        return None if not self.verified else _within(self.lhs8, self.rhs8)

    @property
    def pass9(self) -> Optional[bool]:
        return None if not self.verified else _within(self.lhs9, self.rhs9)

    @property
    def passed(self) -> Optional[bool]:
        return None if not self.verified else bool(self.pass8 and self.pass9)

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc['bounds'] = None if self.bounds is None else self.bounds.to_dict()
        doc.update(pass8=self.pass8, pass9=self.pass9, passed=self.passed)
        if self.verified:
            doc['slack8'] = self.rhs8 - self.lhs8
            doc['slack9'] = self.rhs9 - self.lhs9
        return doc


def _theorem_gate(params: TheoryParams, noise_norm: float) -> Optional[str]:
    if not params.condition_ok:
        return f"delta={params.delta:.6g} is not below the threshold {rip_threshold(params.t):.6g}"
    limit = min(params.epsilon, params.lam / 2.0)
    if noise_norm > limit + 1e-12:
        return f"noise norm {noise_norm:.6g} exceeds min(eps, lam/2)={limit:.6g}"
    return None


def _check_params_match(params: TheoryParams, lam: float, epsilon: float):
    if not math.isclose(params.lam, lam, rel_tol=1e-12) or not math.isclose(params.epsilon, epsilon, rel_tol=1e-12, abs_tol=1e-15):
        raise DomainError(
            f"theory parameters (lam={params.lam}, eps={params.epsilon}) "
            f"do not match the problem (lam={lam}, eps={epsilon})")


def verify_theorem1(p: RecoveryProblem, Xsharp: Any, params: TheoryParams) -> Theorem1Report:
    """
    Check the map-error and Frobenius-error bounds on a solved instance

        ||A(X# - X)|| <= C1 ||X - X_[k]||_* + C2
        ||X# - X||_F  <= C3 ||X - X_[k]||_* + C4

    Returns status 'precondition-unmet' instead of asserting when the RIC
    condition fails or the noise exceeds min(eps, lam / 2).
    """
    if p.truth is None:
        raise DomainError("theorem check needs the ground truth matrix")
    _check_params_match(params, p.lam, p.epsilon)
    Xsharp = as_dense(Xsharp, name='solution')
    reason = _theorem_gate(params, float(np.linalg.norm(p.noise_vector())))
    if reason:
        return Theorem1Report(status=PRECONDITION_UNMET, reason=reason)

    bounds = theorem1_constants(params)
    _, X_tail = split_spectrum(p.truth, params.k)
    tail = nuclear_norm(X_tail)
    H = Xsharp - p.truth
    return Theorem1Report(
        status=VERIFIED,
        tail_norm=tail,
        lhs8=float(np.linalg.norm(apply_map(p.ensemble, H))),
        rhs8=bounds.c1 * tail + bounds.c2,
        lhs9=float(np.linalg.norm(H)),
        rhs9=bounds.c3 * tail + bounds.c4,
        bounds=bounds,
    )


def sparse_tail(x: np.ndarray, k: int) -> float:
    """||x - x_[k]||_1 where x_[k] keeps the k largest-magnitude entries"""
    mags = np.sort(np.abs(x))[::-1]
    return float(np.sum(mags[k:]))


def verify_sparse_theorem1(A: Any, b: Any, x_true: Any, x_sharp: Any, params: TheoryParams) -> Theorem1Report:
    """Vector (BPDN) analogue of the error bounds, entries in place of singular values"""
    A = as_dense(A, name='design')
    b = as_vector(b, name='b')
    x_true = as_vector(x_true, name='truth')
    x_sharp = as_vector(x_sharp, name='solution')
    reason = _theorem_gate(params, float(np.linalg.norm(b - A @ x_true)))
    if reason:
        return Theorem1Report(status=PRECONDITION_UNMET, reason=reason)
    bounds = theorem1_constants(params)
    tail = sparse_tail(x_true, params.k)
    h = x_sharp - x_true
    return Theorem1Report(
        status=VERIFIED,
        tail_norm=tail,
        lhs8=float(np.linalg.norm(A @ h)),
        rhs8=bounds.c1 * tail + bounds.c2,
        lhs9=float(np.linalg.norm(h)),
        rhs9=bounds.c3 * tail + bounds.c4,
        bounds=bounds,
    )


@dataclass(frozen=True)
class PolytopeDecomposition:
    """v = sum_i weights[i] * atoms[i], atoms drawn from U(alpha, k, v)"""
    alpha: float
    k: int
    weights: Tuple[float, ...]
    atoms: Tuple[np.ndarray, ...]

    def recombine(self) -> np.ndarray:
        return sum(w * u for w, u in zip(self.weights, self.atoms))

    def violations(self, v: np.ndarray, tol: float = THEORY_TOLERANCES['lemma1_tol']) -> List[str]:
        """Invariant violations against the decomposed vector (empty when valid)"""
        problems = []
        weights = np.asarray(self.weights)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
            problems.append(f"weights are not convex: sum={weights.sum():.17g}")
        support = set(np.flatnonzero(v))
        l1 = float(np.sum(np.abs(v)))
        for i, u in enumerate(self.atoms):
            nz = set(np.flatnonzero(u))
            if not nz <= support:
                problems.append(f"atom {i} leaves the support of v")
            if len(nz) > self.k:
                problems.append(f"atom {i} has {len(nz)} nonzeros > k={self.k}")
            if abs(float(np.sum(np.abs(u))) - l1) > tol:
                problems.append(f"atom {i} has l1 norm {np.sum(np.abs(u)):.17g}, expected {l1:.17g}")
            if float(np.max(np.abs(u), initial=0.0)) > self.alpha + tol:
                problems.append(f"atom {i} exceeds alpha")
        if float(np.max(np.abs(self.recombine() - v), initial=0.0)) > tol:
            problems.append("atoms do not recombine to v")
        return problems


def in_polytope(v: Any, alpha: float, k: int) -> bool:
    """Membership in T(alpha, k) = {||v||_inf <= alpha, ||v||_1 <= k alpha}"""
    v = as_vector(v)
    slack = 1e-12 * max(1.0, alpha * k)
    return float(np.max(np.abs(v), initial=0.0)) <= alpha + slack and float(np.sum(np.abs(v))) <= k * alpha + slack


def lemma1_decompose(v: Any, alpha: float, k: int) -> PolytopeDecomposition:
    """
    Write v in T(alpha, k) as a convex combination of k-sparse atoms

    Enumerates supports S inside supp(v) with |S| <= k and solves the
    linear feasibility program over weights gamma_S and scaled atoms
    w_S = gamma_S * u_S:

        sum_S w_S = v,  sum(w_S) = ||v||_1 gamma_S,  0 <= w_S <= alpha gamma_S,  sum gamma_S = 1

    Raises:
        DomainError: negative entries or nonpositive alpha/k
        SizeError: beyond the enumeration cap
        MembershipError: v is not in T(alpha, k)
    """
    v = as_vector(v)
    if not alpha > 0 or k < 1:
        raise DomainError(f"alpha must be positive and k >= 1, got alpha={alpha}, k={k}")
    if np.any(v < 0):
        raise DomainError("decomposition is defined for nonnegative vectors")
    if len(v) > THEORY_TOLERANCES['lemma1_max_n'] or k > THEORY_TOLERANCES['lemma1_max_k']:
        raise SizeError(
            f"length {len(v)} / k={k} exceeds the enumeration cap "
            f"({THEORY_TOLERANCES['lemma1_max_n']}, {THEORY_TOLERANCES['lemma1_max_k']})")
    if not in_polytope(v, alpha, k):
        raise MembershipError(
            f"v is not in T(alpha={alpha}, k={k}): ||v||_inf={np.max(v, initial=0.0):.6g}, ||v||_1={np.sum(v):.6g}")

    support = [int(i) for i in np.flatnonzero(v)]
    if len(support) <= k:
        return PolytopeDecomposition(alpha, k, (1.0,), (v.copy(),))

    l1 = float(np.sum(v))
    smallest = max(1, math.ceil(l1 / alpha - 1e-12))
    supports = [S for size in range(smallest, k + 1) for S in itertools.combinations(support, size)]

    # variable layout: [gamma_S for S] + [w_S entries, concatenated]
    n_gamma = len(supports)
    offsets = []
    total = n_gamma
    for S in supports:
        offsets.append(total)
        total += len(S)
    position = {j: r for r, j in enumerate(support)}

    A_eq = np.zeros((len(support) + n_gamma + 1, total))
    b_eq = np.zeros(len(support) + n_gamma + 1)
    A_ub = np.zeros((total - n_gamma, total))
    row_ub = 0
    for s_idx, S in enumerate(supports):
        for pos, j in enumerate(S):
            col = offsets[s_idx] + pos
            A_eq[position[j], col] = 1.0
            A_eq[len(support) + s_idx, col] = 1.0
            A_ub[row_ub, col] = 1.0
            A_ub[row_ub, s_idx] = -alpha
            row_ub += 1
        A_eq[len(support) + s_idx, s_idx] = -l1
        A_eq[-1, s_idx] = 1.0
    b_eq[:len(support)] = v[support]
    b_eq[-1] = 1.0

    result = linprog(
        np.zeros(total), A_ub=A_ub, b_ub=np.zeros(total - n_gamma), A_eq=A_eq, b_eq=b_eq,
        bounds=(0, None), method='highs-ds',
        options={'primal_feasibility_tolerance': 1e-10, 'dual_feasibility_tolerance': 1e-10},
    )
    if not result.success:
        raise ConvergenceError(f"decomposition program failed for a member of T: {result.message}")

    gammas = result.x[:n_gamma]
    weights, atoms = [], []
    for s_idx, S in enumerate(supports):
        gamma = gammas[s_idx]
        if gamma <= 1e-12:
            continue
        u = np.zeros_like(v)
        u[list(S)] = np.clip(result.x[offsets[s_idx]:offsets[s_idx] + len(S)] / gamma, 0.0, alpha)
        u *= l1 / u.sum()
        weights.append(gamma)
        atoms.append(u)
    weights = np.asarray(weights) / np.sum(weights)
    decomposition = PolytopeDecomposition(alpha, k, tuple(float(w) for w in weights), tuple(atoms))

    problems = decomposition.violations(v)
    if problems:
        raise ConvergenceError(f"decomposition program returned an invalid point: {'; '.join(problems)}")
    logger.debug(f"lemma1: {len(atoms)} atoms from {len(supports)} candidate supports")
    return decomposition
