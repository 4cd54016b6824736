"""
Exception types shared by the toolkit modules
"""


class RnnmError(Exception):
    """Base class for every error the toolkit raises on purpose"""


class DomainError(RnnmError, ValueError):
    """An input lies outside the domain of the operation"""


class DimensionError(DomainError):
    pass


class SizeError(DomainError):
    """A combinatorial or desk-scale cap was exceeded"""


class MembershipError(DomainError):
    """A vector is not a member of the polytope T(alpha, k)"""


class ConvergenceError(RnnmError, RuntimeError):
    """An iterative kernel failed (SVD non-convergence, NaN iterates)"""
