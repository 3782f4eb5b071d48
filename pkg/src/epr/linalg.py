"""
Dense small-matrix kernels: pseudo-inverse, pseudo-determinant, rank,
matrix exponential, continuous Lyapunov solve and the Van Loan integral
for Ornstein-Uhlenbeck covariances.

All routines target d <= ~50 and return fresh float64 arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

EPS = np.finfo(np.float64).eps


class NoStationaryStateError(ValueError):
    """Raised when a drift matrix has an eigenvalue with nonpositive real part."""

    def __init__(self, message: str = "no stationary state"):
        super().__init__(message)


@dataclass(frozen=True)
class RankCutoff:
    """Shared threshold for every rank decision in the library.

    A singular value ``s`` counts as nonzero when ``s > tol * s_max`` where
    ``tol`` is ``relative_tolerance`` or, if unset, ``eps * max(rows, cols)``.
    ``support_tolerance`` is the relative residual above which one subspace
    is declared not contained in another (projector tests).
    """

    relative_tolerance: float | None = None
    support_tolerance: float = 1e-8

    def __post_init__(self):
        if self.relative_tolerance is not None and self.relative_tolerance < 0:
            raise ValueError("relative_tolerance must be >= 0")
        if self.support_tolerance < 0:
            raise ValueError("support_tolerance must be >= 0")

    def threshold(self, svals: np.ndarray, shape: tuple[int, ...]) -> float:
        if svals.size == 0:
            return 0.0
        rel = self.relative_tolerance
        if rel is None:
            rel = EPS * max(shape)
        return rel * float(np.max(svals))


DEFAULT_CUTOFF = RankCutoff()


def as_matrix(A, name: str = "A") -> np.ndarray:
    A = np.array(A, dtype=float, copy=True)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def _square(A, name="A") -> np.ndarray:
    A = as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    return A


def _svd(A: np.ndarray):
    # one decomposition for every rank decision, so rank, pseudo-inverse and
    # pseudo-determinant agree even when a value sits on the threshold
    return np.linalg.svd(A, full_matrices=False)


def pseudo_inverse(A, cutoff: RankCutoff = DEFAULT_CUTOFF) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD, zeroing singular values below cutoff."""
    A = as_matrix(A)
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    u, s, vt = _svd(A)
    keep = s > cutoff.threshold(s, A.shape)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def rank_of(A, cutoff: RankCutoff = DEFAULT_CUTOFF) -> int:
    A = as_matrix(A)
    if A.size == 0:
        return 0
    s = _svd(A)[1]
    return int(np.sum(s > cutoff.threshold(s, A.shape)))


def check_symmetric_psd(A, name: str = "A", rtol: float = 1e-10) -> np.ndarray:
    """Validate symmetry and positive semi-definiteness; returns the symmetrised matrix."""
    A = _square(A, name)
    scale = max(np.linalg.norm(A), 1e-300)
    if np.linalg.norm(A - A.T) > rtol * scale + 1e-300:
        raise ValueError(f"{name} is not symmetric")
    A = 0.5 * (A + A.T)
    if A.size and np.linalg.eigvalsh(A)[0] < -rtol * scale:
        raise ValueError(f"{name} is not positive semi-definite")
    return A


def pseudo_det(A, cutoff: RankCutoff = DEFAULT_CUTOFF) -> float:
    """Product of the eigenvalues of a symmetric PSD matrix above the cutoff.

    The empty product (zero matrix) is 1.
    """
    return float(np.exp(log_pseudo_det(A, cutoff)))


def log_pseudo_det(A, cutoff: RankCutoff = DEFAULT_CUTOFF) -> float:
    A = check_symmetric_psd(A)
    if A.size == 0:
        return 0.0
    # singular values of a PSD matrix are its eigenvalues
    s = _svd(A)[1]
    keep = s > cutoff.threshold(s, A.shape)
    return float(np.sum(np.log(s[keep])))


def expm(A) -> np.ndarray:
    """Matrix exponential (scaling and squaring with Pade(13))."""
    A = _square(A)
    return sla.expm(A)


def lyapunov_solve(B, D) -> np.ndarray:
    """Solve ``B S + S B^T = 2 D`` for symmetric ``S``.

    Uses Kronecker vectorisation; intended for d <= 50.

    Raises
    ------
    NoStationaryStateError
        If some eigenvalue of ``B`` has nonpositive real part.
    """
    B = _square(B, "B")
    D = check_symmetric_psd(D, "D", rtol=1e-8)
    d = B.shape[0]
    if D.shape != (d, d):
        raise ValueError("B and D must have the same shape")
    if d and np.min(np.linalg.eigvals(B).real) <= 0:
        raise NoStationaryStateError()
    eye = np.eye(d)
    # row-major vec: vec(B S) = (B kron I) vec S, vec(S B^T) = (I kron B) vec S
    op = np.kron(B, eye) + np.kron(eye, B)
    S = np.linalg.solve(op, 2.0 * D.ravel()).reshape(d, d)
    return 0.5 * (S + S.T)


def van_loan_covariance(B, D, eps: float) -> np.ndarray:
    """``S_eps = int_0^eps exp(-tB) (2D) exp(-tB^T) dt`` via one block exponential.

    ``exp(eps [[-B, 2D], [0, B^T]])`` has upper-right block ``F`` with
    ``F exp(-eps B^T) = S_eps``.
    """
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    B = _square(B, "B")
    D = check_symmetric_psd(D, "D", rtol=1e-8)
    d = B.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -B
    block[:d, d:] = 2.0 * D
    block[d:, d:] = B.T
    E = sla.expm(eps * block)
    S = E[:d, d:] @ E[:d, :d].T
    return 0.5 * (S + S.T)
