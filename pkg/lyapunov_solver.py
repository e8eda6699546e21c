"""
Lyapunov Certificates for the Reference Model

Solves A_m^T P + P A_m = -Q for the symmetric positive-definite P used by every
adaptive law, and checks the sign condition that makes the optimal-control
modification a damping term.

Features:
- Bartels-Stewart solve through scipy with residual and definiteness checks
- Kronecker-product oracle for small systems (used to cross-check the solver)
- Hurwitz and positive-definiteness predicates shared by the model layer
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from config import HURWITZ_TOLERANCE, LYAPUNOV_RESIDUAL_FACTOR
from sync_errors import DimensionMismatch, NotHurwitz, NotPositiveDefinite, SingularAm, SolveFailed

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    P: np.ndarray
    Q: np.ndarray
    residual: float

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.P).min())


@dataclass(frozen=True)
class SignCondition:
    """Value of b^T P A_m^-1 b and whether it is negative"""
    value: float
    holds: bool


def _square(matrix, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {matrix.shape}")
    return matrix


def is_hurwitz(A, tol: float = HURWITZ_TOLERANCE) -> bool:
    eigenvalues = np.linalg.eigvals(_square(A, 'A'))
    return bool(np.all(eigenvalues.real < -tol))


def is_positive_definite(Q) -> bool:
    Q = _square(Q, 'Q')
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() > 0)


def _validate(A_m, Q):
    A_m = _square(A_m, 'A_m')
    Q = _square(Q, 'Q')
    if A_m.shape != Q.shape:
        raise DimensionMismatch(f"A_m {A_m.shape} and Q {Q.shape} differ in size")
    if not is_hurwitz(A_m):
        raise NotHurwitz(f"A_m eigenvalues {np.round(np.linalg.eigvals(A_m), 6)} are not all in the open left half-plane")
    if not is_positive_definite(Q):
        raise NotPositiveDefinite("Q must be symmetric positive definite")
    return A_m, Q


def _residual(A_m: np.ndarray, P: np.ndarray, Q: np.ndarray) -> float:
    return float(np.linalg.norm(A_m.T @ P + P @ A_m + Q, 'fro'))


def _certify(A_m: np.ndarray, P: np.ndarray, Q: np.ndarray) -> LyapunovCertificate:
    P = 0.5 * (P + P.T)
    residual = _residual(A_m, P, Q)
    if not np.isfinite(residual) or residual > LYAPUNOV_RESIDUAL_FACTOR * np.linalg.norm(Q, 'fro'):
        raise SolveFailed(f"Lyapunov residual {residual:.3e} exceeds tolerance")
    if np.linalg.eigvalsh(P).min() <= 0:
        raise SolveFailed("Lyapunov solution is not positive definite")
    return LyapunovCertificate(P=P, Q=Q, residual=residual)


def kronecker_lyapunov(A_m, Q) -> np.ndarray:
    """Dense vectorized solve (I kron A_m^T + A_m^T kron I) vec(P) = -vec(Q)"""
    A_m, Q = _validate(A_m, Q)
    n = A_m.shape[0]
    identity = np.eye(n)
    operator = np.kron(identity, A_m.T) + np.kron(A_m.T, identity)
    vec_p = np.linalg.solve(operator, -Q.flatten(order='F'))
    P = vec_p.reshape((n, n), order='F')
    return 0.5 * (P + P.T)


def solve_lyapunov(A_m, Q, method: str = 'schur') -> LyapunovCertificate:
    """
    Solve A_m^T P + P A_m = -Q.

    method='schur' uses scipy's Bartels-Stewart solver; method='kronecker'
    uses the dense oracle. Both results are symmetrized and certified.
    """
    A_m, Q = _validate(A_m, Q)
    if method == 'schur':
        P = linalg.solve_continuous_lyapunov(A_m.T, -Q)
    elif method == 'kronecker':
        P = kronecker_lyapunov(A_m, Q)
    else:
        raise ValueError(f"unknown Lyapunov method '{method}'")
    certificate = _certify(A_m, np.real(P), Q)
    logger.debug(f"Lyapunov solve ({method}): residual {certificate.residual:.2e}, "
                 f"min eig {certificate.min_eigenvalue:.4g}")
    return certificate


def optimal_modification_coefficient(b, P: np.ndarray, A_m: np.ndarray) -> float:
    """Scalar b^T P A_m^-1 b that multiplies the optimal-control damping term"""
    A_m = _square(A_m, 'A_m')
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape[0] != A_m.shape[0]:
        raise DimensionMismatch(f"b has length {b.shape[0]}, A_m is {A_m.shape}")
    if np.linalg.cond(A_m) > 1.0 / np.finfo(float).eps:
        raise SingularAm("A_m is numerically singular")
    try:
        y = np.linalg.solve(A_m, b)
    except np.linalg.LinAlgError as e:
        raise SingularAm(f"A_m is singular: {e}") from e
    return float(b @ P @ y)


def check_sign_condition(b, certificate: LyapunovCertificate, A_m) -> SignCondition:
    value = optimal_modification_coefficient(b, certificate.P, A_m)
    return SignCondition(value=value, holds=value < 0)
