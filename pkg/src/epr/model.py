"""
Process definitions and the Helmholtz decomposition of their drift.

A stationary diffusion ``dx = b(x) dt + sigma dW`` with density ``rho``
splits its drift into a reversible part ``b_rev = D grad log rho`` and an
irreversible part ``b_irr = b - b_rev`` with ``div(b_irr rho) = 0``.
For linear models ``b(x) = -B x`` and ``rho = N(0, Pi^{-1})`` this reads
``B = (D + Q) Pi`` with ``Q`` antisymmetric.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .linalg import (
    DEFAULT_CUTOFF,
    RankCutoff,
    as_matrix,
    check_symmetric_psd,
    expm,
    lyapunov_solve,
    pseudo_inverse,
    van_loan_covariance,
)


class InconsistentModelError(ValueError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LinearDiffusion:
    """``dx = -B x dt + sigma dW`` at stationarity, with its Helmholtz certificate.

    Use :func:`linear_from_drift` or :func:`linear_from_parts` to build one.
    """

    B: np.ndarray
    sigma: np.ndarray
    D: np.ndarray
    Sigma_stat: np.ndarray
    Pi: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        for name in ("B", "sigma", "D", "Sigma_stat", "Pi", "Q"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def C(self) -> np.ndarray:
        """Drift matrix of the time-reversed process."""
        return (self.D - self.Q) @ self.Pi

    def parts(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.Pi, self.D, self.Q

    def drift(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(x) @ self.B.T

    def b_rev(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(x) @ (self.D @ self.Pi).T

    def b_irr(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(x) @ (self.Q @ self.Pi).T

    def log_density_grad(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(x) @ self.Pi.T

    def stationarity_residual(self) -> float:
        """Frobenius residual of ``B Sigma + Sigma B^T - 2D``."""
        return float(np.linalg.norm(self.B @ self.Sigma_stat + self.Sigma_stat @ self.B.T - 2 * self.D))

    def as_sde(self) -> "NonlinearSDE":
        return NonlinearSDE(drift=self.drift, sigma_const=self.sigma, dim=self.dim,
                            log_density_grad=self.log_density_grad)


def _antisymmetry_tol(B: np.ndarray) -> float:
    return 1e-6 * max(np.linalg.norm(B), 1.0)


def linear_from_drift(B, sigma) -> LinearDiffusion:
    """Build a stationary linear model from its drift and volatility matrices.

    Raises
    ------
    NoStationaryStateError
        If ``B`` is not stable.
    InconsistentModelError
        If the recovered ``Q`` is not antisymmetric or the stationary
        covariance is singular.
    """
    B = as_matrix(B, "B")
    sigma = as_matrix(sigma, "sigma")
    d = B.shape[0]
    if B.shape != (d, d) or sigma.shape[0] != d:
        raise ValueError(f"B {B.shape} and sigma {sigma.shape} are inconsistent")
    D = 0.5 * sigma @ sigma.T
    Sigma = lyapunov_solve(B, D)
    w = np.linalg.eigvalsh(Sigma)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise InconsistentModelError("stationary covariance is singular; no full-support density")
    Pi = np.linalg.inv(Sigma)
    Pi = 0.5 * (Pi + Pi.T)
    Q = B @ Sigma - D
    if np.linalg.norm(Q + Q.T) > _antisymmetry_tol(B):
        raise InconsistentModelError("recovered Q is not antisymmetric")
    Q = 0.5 * (Q - Q.T)
    return LinearDiffusion(B=B, sigma=sigma, D=D, Sigma_stat=Sigma, Pi=Pi, Q=Q)


def sqrt_psd(A: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root."""
    w, V = np.linalg.eigh(A)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def linear_from_parts(Pi, D, Q, sigma=None) -> LinearDiffusion:
    """Build ``B = (D + Q) Pi`` from precision, diffusion tensor and solenoidal matrix.

    ``sigma`` defaults to the symmetric square root of ``2 D``; if given it
    must satisfy ``sigma sigma^T = 2 D``.
    """
    Pi = check_symmetric_psd(Pi, "Pi", rtol=1e-10)
    if np.linalg.eigvalsh(Pi)[0] <= 0:
        raise ValueError("Pi must be positive definite")
    D = check_symmetric_psd(D, "D", rtol=1e-10)
    Q = as_matrix(Q, "Q")
    d = Pi.shape[0]
    if D.shape != (d, d) or Q.shape != (d, d):
        raise ValueError("Pi, D and Q must share one square shape")
    if np.linalg.norm(Q + Q.T) > 1e-10 * max(np.linalg.norm(Q), 1.0):
        raise ValueError("Q must be antisymmetric")
    Q = 0.5 * (Q - Q.T)
    if sigma is None:
        sigma = sqrt_psd(2.0 * D)
    else:
        sigma = as_matrix(sigma, "sigma")
        if sigma.shape[0] != d:
            raise ValueError("sigma must have d rows")
        if np.linalg.norm(sigma @ sigma.T - 2 * D) > 1e-10 * max(np.linalg.norm(D), 1.0):
            raise ValueError("sigma sigma^T must equal 2 D")
    Sigma = np.linalg.inv(Pi)
    Sigma = 0.5 * (Sigma + Sigma.T)
    B = (D + Q) @ Pi
    return LinearDiffusion(B=B, sigma=sigma, D=D, Sigma_stat=Sigma, Pi=Pi, Q=Q)


def time_reverse(m: LinearDiffusion) -> LinearDiffusion:
    """Stationary time reversal: drift ``C = (D - Q) Pi``, same noise and density."""
    return LinearDiffusion(B=m.C, sigma=m.sigma, D=m.D, Sigma_stat=m.Sigma_stat, Pi=m.Pi, Q=-m.Q)


# --------------------------------------------------------------------------
# nonlinear models with constant volatility


@dataclass(frozen=True)
class NonlinearSDE:
    """``dx = drift(x) dt + sigma_const dW``.

    Callables act on (..., dim) arrays. ``sigma_fn`` (state -> d x m
    matrix) marks a state-dependent volatility: Euler-Maruyama simulation
    honours it, every Helmholtz and support routine refuses it.
    """

    drift: Callable[[np.ndarray], np.ndarray]
    sigma_const: np.ndarray
    dim: int
    log_density_grad: Callable[[np.ndarray], np.ndarray] | None = None
    sigma_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        sigma = as_matrix(self.sigma_const, "sigma_const")
        if sigma.shape[0] != self.dim:
            raise ValueError(f"sigma_const must have {self.dim} rows")
        object.__setattr__(self, "sigma_const", _freeze(sigma))

    @property
    def D(self) -> np.ndarray:
        return 0.5 * self.sigma_const @ self.sigma_const.T

    def as_sde(self) -> "NonlinearSDE":
        return self


class MissingDensityError(ValueError):
    def __init__(self):
        super().__init__("model has no log_density_grad; Helmholtz split needs the stationary density")


def helmholtz_pointwise(s, x) -> tuple[np.ndarray, np.ndarray]:
    """Split the drift at ``x`` (shape (d,) or (n, d)) into ``(b_rev, b_irr)``."""
    s = s.as_sde()
    if s.log_density_grad is None:
        raise MissingDensityError()
    if s.sigma_fn is not None:
        raise ValueError("Helmholtz decomposition is only supported for constant volatility")
    x = np.asarray(x, dtype=float)
    b_rev = s.log_density_grad(x) @ s.D.T
    return b_rev, s.drift(x) - b_rev


def _b_irr(s: NonlinearSDE, x: np.ndarray) -> np.ndarray:
    return helmholtz_pointwise(s, x)[1]


def divergence_check(s, points, h: float | None = None) -> float:
    """Max over ``points`` of ``|div b_irr + b_irr . grad log rho|``.

    This is ``div(b_irr rho) / rho``, estimated with central differences;
    the default step is ``1e-4 * (1 + |x|)``.
    """
    s = s.as_sde()
    if s.log_density_grad is None:
        raise MissingDensityError()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = s.dim
    worst = 0.0
    for x in pts:
        hx = h if h is not None else 1e-4 * (1.0 + np.linalg.norm(x))
        shifts = np.eye(d) * hx
        fwd = _b_irr(s, x + shifts)
        bwd = _b_irr(s, x - shifts)
        div = float(np.sum(np.diag(fwd - bwd)) / (2 * hx))
        b = _b_irr(s, x)
        resid = div + float(b @ s.log_density_grad(x))
        worst = max(worst, abs(resid))
    return worst


def range_condition(s, points=None, tol: float = 1e-8,
                    cutoff: RankCutoff = DEFAULT_CUTOFF) -> float:
    """Fraction of points where ``b_irr(x)`` leaves the image of sigma.

    The residual ``|(I - sigma sigma^-) b_irr(x)| / (1 + |b_irr(x)|)`` is
    compared against ``tol``. For a :class:`LinearDiffusion` without points
    the test is the single inclusion ``im Q subset im sigma`` (0.0 or 1.0).
    """
    if isinstance(s, LinearDiffusion) and points is None:
        proj = s.sigma @ pseudo_inverse(s.sigma, cutoff)
        resid = np.linalg.norm((np.eye(s.dim) - proj) @ s.Q)
        return float(resid > tol * max(1.0, np.linalg.norm(s.Q)))
    if points is None:
        raise ValueError("points are required for nonlinear models")
    sde = s.as_sde()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        return 0.0
    b = _b_irr(sde, pts)
    proj = sde.sigma_const @ pseudo_inverse(sde.sigma_const, cutoff)
    r = np.linalg.norm(b - b @ proj.T, axis=1) / (1.0 + np.linalg.norm(b, axis=1))
    return float(np.mean(r > tol))


# --------------------------------------------------------------------------
# underdamped Langevin


@dataclass(frozen=True)
class Potential:
    """Named potential from the built-in registry; acts on (..., n) arrays."""

    name: str
    params: dict = field(default_factory=dict)

    def value(self, q: np.ndarray) -> np.ndarray:
        return _POTENTIALS[self.name][0](np.asarray(q, dtype=float), **self.params)

    def grad(self, q: np.ndarray) -> np.ndarray:
        return _POTENTIALS[self.name][1](np.asarray(q, dtype=float), **self.params)

    __call__ = grad


def _quad_value(q, K):
    K = np.asarray(K, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", q, K, q)


def _quad_grad(q, K):
    return q @ np.asarray(K, dtype=float).T


def _dw_value(q, a, b):
    return np.sum(a * (q**2 - b) ** 2, axis=-1)


def _dw_grad(q, a, b):
    return 4.0 * a * q * (q**2 - b)


def _cos_value(q, k):
    return -np.sum(np.cos(k * q), axis=-1)


def _cos_grad(q, k):
    return k * np.sin(k * q)


_POTENTIALS = {
    "quadratic": (_quad_value, _quad_grad),
    "double_well": (_dw_value, _dw_grad),
    "cosine": (_cos_value, _cos_grad),
}


def potential(name: str, **params) -> Potential:
    """Look up a registry potential.

    ``quadratic(K)``: ``q^T K q / 2``; ``double_well(a, b)``:
    ``sum a (q_i^2 - b)^2``; ``cosine(k)``: ``-sum cos(k q_i)``.
    """
    if name not in _POTENTIALS:
        raise ValueError(f"unknown potential {name!r}; known: {sorted(_POTENTIALS)}")
    if name == "quadratic":
        if "K" not in params:
            raise ValueError("quadratic potential needs K")
        params = {"K": np.atleast_2d(np.asarray(params["K"], dtype=float))}
    else:
        params = {k: float(v) for k, v in params.items()}
    return Potential(name, params)


@dataclass(frozen=True)
class UnderdampedLangevin:
    """``dq = M^{-1} p dt``, ``dp = -grad V dt - gamma M^{-1} p dt + sqrt(2 gamma / beta) dW``.

    State vectors are laid out as ``(q, p)`` with ``d = 2n``.
    """

    grad_V: Callable[[np.ndarray], np.ndarray]
    M_diag: np.ndarray
    gamma: float
    beta: float
    n: int

    def __post_init__(self):
        M = np.broadcast_to(np.asarray(self.M_diag, dtype=float), (self.n,)).copy()
        if np.any(M <= 0) or not self.gamma > 0 or not self.beta > 0:
            raise ValueError("masses, gamma and beta must be positive")
        object.__setattr__(self, "M_diag", _freeze(M))

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def sigma(self) -> np.ndarray:
        n = self.n
        s = np.zeros((2 * n, n))
        s[n:] = np.sqrt(2 * self.gamma / self.beta) * np.eye(n)
        return s

    def drift(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q, p = x[..., : self.n], x[..., self.n:]
        v = p / self.M_diag
        return np.concatenate([v, -self.grad_V(q) - self.gamma * v], axis=-1)

    def log_density_grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q, p = x[..., : self.n], x[..., self.n:]
        return -self.beta * np.concatenate([self.grad_V(q), p / self.M_diag], axis=-1)

    def as_sde(self) -> NonlinearSDE:
        return NonlinearSDE(drift=self.drift, sigma_const=self.sigma, dim=self.dim,
                            log_density_grad=self.log_density_grad)


def momentum_flip(n: int) -> np.ndarray:
    """``P = diag(I_n, -I_n)``."""
    return np.diag(np.r_[np.ones(n), -np.ones(n)])


def langevin_as_linear(l: UnderdampedLangevin, K, Q1=None, Q2=None) -> LinearDiffusion:
    """Quadratic-potential Langevin (``V = q^T K q / 2``) as a linear diffusion.

    ``Q1``/``Q2`` add the antisymmetric perturbations
    ``dq += -Q1 grad V dt`` and ``dp += -Q2 M^{-1} p dt``.
    """
    n = l.n
    K = as_matrix(K, "K")
    if K.shape != (n, n):
        raise ValueError(f"K must be {n}x{n}")
    if np.linalg.norm(K - K.T) > 1e-12 * max(np.linalg.norm(K), 1) or np.linalg.eigvalsh(K)[0] <= 0:
        raise ValueError("K must be symmetric positive definite")
    Z = np.zeros((n, n))
    Q1 = Z if Q1 is None else as_matrix(Q1, "Q1")
    Q2 = Z if Q2 is None else as_matrix(Q2, "Q2")
    Pi = l.beta * np.block([[K, Z], [Z, np.diag(1.0 / l.M_diag)]])
    D = np.block([[Z, Z], [Z, (l.gamma / l.beta) * np.eye(n)]])
    Q = np.block([[Q1, -np.eye(n)], [np.eye(n), Q2]]) / l.beta
    return linear_from_parts(Pi, D, Q, sigma=l.sigma)


class FlipCheck(NamedTuple):
    holds: bool
    mean_residual: float
    cov_residual: float


def momentum_flip_identity(m: LinearDiffusion, eps: float, tol: float = 1e-9) -> FlipCheck:
    """Check ``P e^{-eps C} P = e^{-eps B}`` and ``P Sbar_eps P = S_eps``."""
    if m.dim % 2:
        raise ValueError("momentum flip needs an even state dimension")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return FlipCheck(True, 0.0, 0.0)
    P = momentum_flip(m.dim // 2)
    C = m.C
    r_mean = np.linalg.norm(P @ expm(-eps * C) @ P - expm(-eps * m.B))
    r_cov = np.linalg.norm(P @ van_loan_covariance(C, m.D, eps) @ P - van_loan_covariance(m.B, m.D, eps))
    return FlipCheck(bool(r_mean <= tol and r_cov <= tol), float(r_mean), float(r_cov))
