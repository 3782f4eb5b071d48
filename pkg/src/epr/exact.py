"""
Exact machinery for linear diffusions: Gaussian transition kernels, exact
sampling, the finite-step entropy production ``e_p(eps)`` and the
closed-form rate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _core
from scipy.linalg import solve_discrete_lyapunov

from .gaussian import GaussianDist, kl_gaussian, psd_sqrt_factor
from .linalg import (
    DEFAULT_CUTOFF,
    NoStationaryStateError,
    RankCutoff,
    expm,
    log_pseudo_det,
    pseudo_inverse,
    rank_of,
    van_loan_covariance,
)
from .model import LinearDiffusion, helmholtz_pointwise, range_condition
from .paths import INIT_STREAM, SamplePaths, check_finite, path_chunks, path_rng, resolve_x0


@dataclass(frozen=True)
class OUTransitionKernel:
    """``p_eps(., x) = N(mean_map @ x, cov)``."""

    mean_map: np.ndarray
    cov: np.ndarray
    eps: float

    @property
    def dim(self) -> int:
        return self.mean_map.shape[0]


def kernel(m: LinearDiffusion, eps: float, reversed: bool = False) -> OUTransitionKernel:
    """Forward (drift ``B``) or time-reversed (drift ``C``) transition kernel."""
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    A = m.C if reversed else m.B
    return OUTransitionKernel(expm(-eps * A), van_loan_covariance(A, m.D, eps), float(eps))


def apply_kernel(k: OUTransitionKernel, x) -> GaussianDist:
    x = np.asarray(x, dtype=float)
    if x.shape != (k.dim,):
        raise ValueError(f"state must have shape ({k.dim},), got {x.shape}")
    return GaussianDist(k.mean_map @ x, k.cov)


def simulate_exact(m: LinearDiffusion, x0, eps: float, n_steps: int, n_paths: int, seed: int,
                   cutoff: RankCutoff = DEFAULT_CUTOFF, backend: str | None = None,
                   path_offset: int = 0) -> SamplePaths:
    """Sample paths by drawing every increment from the exact kernel.

    ``x0`` is a state, an (n_paths, d) array, or ``"stationary"`` for
    ``x0 ~ N(0, Sigma)``. Path ``i`` draws its noise from ``path_rng(seed, path_offset + i)``,
    so a run split into batches reproduces the unsplit run.
    """
    k = kernel(m, eps)
    L = psd_sqrt_factor(k.cov, cutoff)
    r = L.shape[1]
    d = m.dim
    stationary = isinstance(x0, str)
    if stationary and x0 != "stationary":
        raise ValueError(f"unknown initial condition {x0!r}")
    L0 = psd_sqrt_factor(m.Sigma_stat, cutoff) if stationary else None
    X0_all = None if stationary else resolve_x0(x0, d, n_paths)
    data = np.empty((n_paths, n_steps + 1, d))
    for chunk in path_chunks(n_paths, n_steps * max(r, 1) + d):
        X0 = np.empty((len(chunk), d))
        Z = np.empty((len(chunk), n_steps, r))
        for j, i in enumerate(chunk):
            rng = path_rng(seed, path_offset + i)
            X0[j] = L0 @ path_rng(seed, path_offset + i, INIT_STREAM).standard_normal(L0.shape[1]) if stationary else X0_all[i]
            Z[j] = rng.standard_normal((n_steps, r))
        block = _core.affine_recursion(k.mean_map, L if r else np.zeros((d, 0)), X0, Z, backend=backend)
        check_finite(block, chunk.start)
        data[chunk.start:chunk.stop] = block
    return SamplePaths(data, float(eps), int(seed), "exact")


def _clamp(val: float) -> float:
    if val < -1e-10 * max(1.0, abs(val)):
        raise ArithmeticError(f"entropy production evaluated to {val}, expected >= 0")
    return max(float(val), 0.0)


def ep_closed_form(m: LinearDiffusion, cutoff: RankCutoff = DEFAULT_CUTOFF, involution=None) -> float:
    """Entropy production rate of a stationary linear diffusion.

    ``-tr(D^- B Q)`` when ``im Q`` lies in ``im sigma``, otherwise ``inf``.
    With ``involution`` (a matrix ``P`` with ``P^2 = I`` that fixes the
    stationary law and the noise) the generalised rate is returned: the
    irreversible drift becomes ``-(B - P C P) x / 2``.
    """
    if involution is None:
        if range_condition(m, tol=cutoff.support_tolerance, cutoff=cutoff):
            return np.inf
        val = -np.trace(pseudo_inverse(m.D, cutoff) @ m.B @ m.Q)
        return _clamp(val)
    P = _check_involution(m, involution)
    G = 0.5 * (m.B - P @ m.C @ P)
    proj = m.sigma @ pseudo_inverse(m.sigma, cutoff)
    if np.linalg.norm(G - proj @ G) > cutoff.support_tolerance * max(1.0, np.linalg.norm(G)):
        return np.inf
    val = np.trace(G.T @ pseudo_inverse(m.D, cutoff) @ G @ m.Sigma_stat)
    return _clamp(val)


def _check_involution(m: LinearDiffusion, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    d = m.dim
    if P.shape != (d, d) or np.linalg.norm(P @ P - np.eye(d)) > 1e-9:
        raise ValueError("involution must be a d x d matrix with P @ P = I")
    if np.linalg.norm(P @ m.Sigma_stat @ P.T - m.Sigma_stat) > 1e-9 * max(1.0, np.linalg.norm(m.Sigma_stat)):
        raise ValueError("involution must leave the stationary density invariant")
    return P


class EpEpsTerms(NamedTuple):
    """Pieces of the finite-step formula, for diagnostics."""

    value: float
    trace_term: float
    rank: int
    logdet_term: float
    mean_term: float
    cond_reversed: float
    finite: bool


def ep_eps_terms(m: LinearDiffusion, eps: float, cutoff: RankCutoff = DEFAULT_CUTOFF,
                 involution=None) -> EpEpsTerms:
    """Evaluate ``E_rho KL(p_eps(., x) || pbar_eps(., x)) / eps`` in closed form.

    The reversed kernel is conjugated by ``involution`` when given.
    """
    fwd = kernel(m, eps)
    rev = kernel(m, eps, reversed=True)
    A, S = fwd.mean_map, fwd.cov
    Abar, Sbar = rev.mean_map, rev.cov
    if involution is not None:
        P = _check_involution(m, involution)
        Abar, Sbar = P @ Abar @ P, P @ Sbar @ P
    Sbar_pinv = pseudo_inverse(Sbar, cutoff)
    d = m.dim
    tol = cutoff.support_tolerance
    resid = np.eye(d) - Sbar @ Sbar_pinv
    r_fwd = rank_of(S, cutoff)
    r_rev = rank_of(Sbar, cutoff)
    w = np.linalg.eigvalsh(Sbar)
    kept = w[w > cutoff.threshold(np.abs(w), Sbar.shape)]
    cond = float(kept[-1] / kept[0]) if kept.size else 1.0
    dA = Abar - A
    inf_terms = EpEpsTerms(np.inf, np.nan, r_fwd, np.nan, np.nan, cond, False)
    if r_fwd != r_rev or np.linalg.norm(resid @ S) > tol * max(np.linalg.norm(S), 1e-300):
        return inf_terms
    # mean offsets at x ~ rho span im(dA Sigma^{1/2}) = im(dA)
    if np.linalg.norm(resid @ dA) > tol * max(np.linalg.norm(dA), np.linalg.norm(S) ** 0.5, 1e-300):
        return inf_terms
    tr = float(np.trace(Sbar_pinv @ S))
    logdet = log_pseudo_det(Sbar, cutoff) - log_pseudo_det(S, cutoff)
    mean = float(np.trace(m.Sigma_stat @ dA.T @ Sbar_pinv @ dA))
    val = (tr - r_fwd + logdet + mean) / (2.0 * eps)
    return EpEpsTerms(_clamp(val), tr, r_fwd, logdet, mean, cond, True)


def ep_eps(m: LinearDiffusion, eps: float, cutoff: RankCutoff = DEFAULT_CUTOFF, involution=None) -> float:
    """Entropy production of the exact simulation with time step ``eps``.

    Tends to :func:`ep_closed_form` as ``eps`` decreases; ``inf`` when the
    forward and reversed kernels have different supports.
    """
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    return ep_eps_terms(m, eps, cutoff, involution).value


def chain_stationary_cov(G, W) -> np.ndarray:
    """Stationary covariance ``S = G S G^T + W`` of a stable linear Gaussian chain."""
    G = np.asarray(G, dtype=float)
    if np.max(np.abs(np.linalg.eigvals(G))) >= 1.0 - 1e-12:
        raise NoStationaryStateError("recursion matrix has spectral radius >= 1")
    S = solve_discrete_lyapunov(G, np.asarray(W, dtype=float))
    return 0.5 * (S + S.T)


def ep_gaussian_chain(G, W, eps: float, involution=None, cutoff: RankCutoff = DEFAULT_CUTOFF) -> float:
    """Entropy production per unit time of the stationary chain ``x' = G x + N(0, W)``.

    Relative entropy between the law of ``(x_0, x_1)`` and that of
    ``(P x_1, P x_0)``, divided by ``eps``; ``inf`` when the two pair laws
    have different supports.
    """
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    G = np.asarray(G, dtype=float)
    d = G.shape[0]
    S = chain_stationary_cov(G, W)
    P = np.eye(d) if involution is None else np.asarray(involution, dtype=float)
    if P.shape != (d, d) or np.linalg.norm(P @ P - np.eye(d)) > 1e-9:
        raise ValueError("involution must be a d x d matrix with P @ P = I")
    cross = G @ S
    fwd = np.block([[S, cross.T], [cross, G @ S @ G.T + W]])
    swap = np.block([[np.zeros((d, d)), P], [P, np.zeros((d, d))]])
    rev = swap @ fwd @ swap.T
    z = np.zeros(2 * d)
    return kl_gaussian(GaussianDist(z, fwd), GaussianDist(z, rev), cutoff) / eps


class QuadratureEstimate(NamedTuple):
    value: float
    stderr: float
    n: int
    violation_fraction: float

    @property
    def is_infinite(self) -> bool:
        return bool(np.isinf(self.value))


def ep_quadrature_nonlinear(s, samples, cutoff: RankCutoff = DEFAULT_CUTOFF,
                            tol: float = 1e-8) -> QuadratureEstimate:
    """Monte-Carlo average of ``b_irr^T D^- b_irr`` over samples of the stationary density.

    Returns ``inf`` (with the violating fraction) if the irreversible drift
    leaves the image of sigma at any sample.
    """
    sde = s.as_sde()
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    frac = range_condition(sde, X, tol=tol, cutoff=cutoff)
    if frac > 0:
        return QuadratureEstimate(np.inf, np.nan, len(X), frac)
    _, b = helmholtz_pointwise(sde, X)
    vals = np.einsum("ni,ij,nj->n", b, pseudo_inverse(sde.D, cutoff), b)
    se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else np.nan
    return QuadratureEstimate(float(np.mean(vals)), se, len(X), 0.0)
