"""
Approximate integrators: Euler-Maruyama for generic SDEs and the BBK
splitting for underdamped Langevin dynamics.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _core, _pykernels
from .gaussian import psd_sqrt_factor
from .linalg import DEFAULT_CUTOFF, RankCutoff, pseudo_inverse
from .model import LinearDiffusion, NonlinearSDE, Potential, UnderdampedLangevin
from .paths import (
    ExplosionError,
    SamplePaths,
    check_finite,
    path_chunks,
    INIT_STREAM,
    path_rng,
    resolve_x0,
)

__all__ = [
    "ExplosionError",
    "SamplePaths",
    "simulate_em",
    "simulate_bbk",
    "em_kernel_supports",
    "AffineSet",
    "SupportReport",
    "em_recursion_matrices",
    "bbk_recursion_matrices",
]

_KIND = {"quadratic": 0, "double_well": 1, "cosine": 2}


def _stationary_sampler(s, cutoff):
    """Return ``f(rng) -> x0`` drawing from the exact stationary law, if known."""
    if isinstance(s, LinearDiffusion):
        L = psd_sqrt_factor(s.Sigma_stat, cutoff)
        return lambda rng: L @ rng.standard_normal(L.shape[1])
    if isinstance(s, UnderdampedLangevin) and isinstance(s.grad_V, Potential) and s.grad_V.name == "quadratic":
        K = s.grad_V.params["K"]
        Lq = psd_sqrt_factor(np.linalg.inv(K) / s.beta, cutoff)
        sp = np.sqrt(s.M_diag / s.beta)
        n = s.n
        return lambda rng: np.r_[Lq @ rng.standard_normal(n), sp * rng.standard_normal(n)]
    raise ValueError("stationary start needs a linear model or a quadratic-potential Langevin model")


def simulate_em(s, x0, eps: float, n_steps: int, n_paths: int, seed: int,
                cutoff: RankCutoff = DEFAULT_CUTOFF, backend: str | None = None,
                path_offset: int = 0) -> SamplePaths:
    """Euler-Maruyama: ``x_{i+1} = x_i + eps b(x_i) + sigma(x_i) omega_i``, ``omega_i ~ N(0, eps I)``.

    ``s`` is a :class:`LinearDiffusion`, :class:`NonlinearSDE` or
    :class:`UnderdampedLangevin`. Linear models run through the compiled
    affine recursion. Raises :class:`ExplosionError` on a non-finite state.
    """
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    if isinstance(s, LinearDiffusion):
        sde = s.as_sde()
        dim, m = s.dim, s.sigma.shape[1]
    else:
        sde = s.as_sde()
        dim, m = sde.dim, sde.sigma_const.shape[1]
    x0_fn = _stationary_sampler(s, cutoff) if isinstance(x0, str) else None
    if isinstance(x0, str) and x0 != "stationary":
        raise ValueError(f"unknown initial condition {x0!r}")
    X0_all = None if x0_fn else resolve_x0(x0, dim, n_paths)
    sq = np.sqrt(eps)
    data = np.empty((n_paths, n_steps + 1, dim))
    for chunk in path_chunks(n_paths, n_steps * m + dim):
        X0 = np.empty((len(chunk), dim))
        Z = np.empty((len(chunk), n_steps, m))
        for j, i in enumerate(chunk):
            rng = path_rng(seed, path_offset + i)
            X0[j] = x0_fn(path_rng(seed, path_offset + i, INIT_STREAM)) if x0_fn else X0_all[i]
            Z[j] = rng.standard_normal((n_steps, m))
        if isinstance(s, LinearDiffusion):
            A = np.eye(dim) - eps * s.B
            block = _core.affine_recursion(A, sq * s.sigma, X0, Z, backend=backend)
        else:
            block = _em_generic(sde, eps, X0, Z)
        check_finite(block, chunk.start)
        data[chunk.start:chunk.stop] = block
    return SamplePaths(data, float(eps), int(seed), "euler_maruyama")


def _em_generic(sde: NonlinearSDE, eps, X0, Z):
    P, T, _ = Z.shape
    out = np.empty((P, T + 1, sde.dim))
    out[:, 0] = X0
    x = X0.copy()
    sq = np.sqrt(eps)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T):
            if sde.sigma_fn is None:
                noise = Z[:, k] @ sde.sigma_const.T
            else:
                noise = np.einsum("pij,pj->pi", sde.sigma_fn(x), Z[:, k])
            x = x + eps * sde.drift(x) + sq * noise
            out[:, k + 1] = x
    return out


def simulate_bbk(l: UnderdampedLangevin, x0, eps: float, n_steps: int, n_paths: int, seed: int,
                 burn_in: int = 0, cutoff: RankCutoff = DEFAULT_CUTOFF,
                 backend: str | None = None, path_offset: int = 0) -> SamplePaths:
    """BBK splitting: half kick, drift, half kick, each kick with its own noise.

    ``p_{i+1/2} = p_i - grad V(q_i) eps/2 - gamma M^{-1} p_i eps/2 + sqrt(2 gamma/beta) w_i``,
    ``q_{i+1} = q_i + M^{-1} p_{i+1/2} eps``,
    ``p_{i+1} = p_{i+1/2} - grad V(q_{i+1}) eps/2 - gamma M^{-1} p_{i+1/2} eps/2 + sqrt(2 gamma/beta) w_{i+1/2}``,
    with ``w ~ N(0, eps/2 I)``; the noise amplitude does not involve ``M``.

    ``x0 = "stationary"`` draws from the canonical density (quadratic
    potentials only); ``burn_in`` steps are simulated and discarded.
    Registry potentials run in the compiled kernel, other callables in numpy.
    """
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    n = l.n
    x0_fn = _stationary_sampler(l, cutoff) if isinstance(x0, str) else None
    if isinstance(x0, str) and x0 != "stationary":
        raise ValueError(f"unknown initial condition {x0!r}")
    X0_all = None if x0_fn else resolve_x0(x0, 2 * n, n_paths)
    total = n_steps + burn_in
    noise = np.sqrt(2.0 * l.gamma / l.beta)
    m_inv = 1.0 / l.M_diag
    scale = np.sqrt(0.5 * eps)
    data = np.empty((n_paths, n_steps + 1, 2 * n))
    for chunk in path_chunks(n_paths, 2 * total * n + 2 * n):
        X0 = np.empty((len(chunk), 2 * n))
        W = np.empty((len(chunk), total, 2, n))
        for j, i in enumerate(chunk):
            rng = path_rng(seed, path_offset + i)
            X0[j] = x0_fn(path_rng(seed, path_offset + i, INIT_STREAM)) if x0_fn else X0_all[i]
            W[j] = rng.standard_normal((total, 2, n))
        W *= scale
        W1 = np.ascontiguousarray(W[:, :, 0])
        W2 = np.ascontiguousarray(W[:, :, 1])
        pot = l.grad_V
        with np.errstate(over="ignore", invalid="ignore"):
            if isinstance(pot, Potential):
                pr = pot.params
                K = pr.get("K", np.zeros((n, n)))
                block = _core.bbk_native(_KIND[pot.name], K, pr.get("a", 0.0), pr.get("b", 0.0),
                                         pr.get("k", 0.0), m_inv, l.gamma, noise, eps, X0, W1, W2,
                                         backend=backend)
            else:
                block = _pykernels.bbk_callable(pot, m_inv, l.gamma, noise, eps, X0, W1, W2)
        check_finite(block, chunk.start)
        data[chunk.start:chunk.stop] = block[:, burn_in:]
    return SamplePaths(data, float(eps), int(seed), "bbk")


def em_recursion_matrices(m: LinearDiffusion, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama on a linear model as ``x' = G x + w``, ``w ~ N(0, W)``."""
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    return np.eye(m.dim) - eps * m.B, 2.0 * eps * m.D


def bbk_recursion_matrices(l: UnderdampedLangevin, K, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """BBK with ``V(q) = q^T K q / 2`` as ``x' = G x + w``, ``w ~ N(0, W)``.

    The step is kick, drift, kick: ``G = M1 M2 M1`` with the two kicks
    contributing independent noise.
    """
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    n = l.n
    K = np.asarray(K, dtype=float).reshape(n, n)
    h = 0.5 * eps
    m_inv = np.diag(1.0 / l.M_diag)
    I = np.eye(n)
    Z = np.zeros((n, n))
    kick = np.block([[I, Z], [-h * K, I - h * l.gamma * m_inv]])
    drift = np.block([[I, eps * m_inv], [Z, I]])
    E = np.vstack([Z, I])
    first = kick @ drift @ E
    var = h * 2.0 * l.gamma / l.beta
    return kick @ drift @ kick, var * (first @ first.T + E @ E.T)


# --------------------------------------------------------------------------
# supports of the Euler-Maruyama transition kernels


class AffineSet(NamedTuple):
    """``{point + basis @ c}``; ``basis`` has orthonormal columns."""

    point: np.ndarray
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def contains(self, y, tol: float = 1e-9) -> bool:
        r = np.asarray(y, dtype=float) - self.point
        r = r - self.basis @ (self.basis.T @ r)
        return bool(np.linalg.norm(r) <= tol * (1.0 + np.linalg.norm(y)))

    def same_as(self, other: "AffineSet", tol: float = 1e-9) -> bool:
        if self.dim != other.dim:
            return False
        P1 = self.basis @ self.basis.T
        P2 = other.basis @ other.basis.T
        return bool(np.linalg.norm(P1 - P2) <= tol and self.contains(other.point, tol))


class SupportReport(NamedTuple):
    forward: AffineSet
    backward: AffineSet | None
    backward_probes: np.ndarray
    disjoint: bool


def _orth(A: np.ndarray, cutoff: RankCutoff) -> np.ndarray:
    if A.size == 0:
        return np.zeros((A.shape[0], 0))
    u, sv, _ = np.linalg.svd(A)
    r = int(np.sum(sv > cutoff.threshold(sv, A.shape)))
    return u[:, :r]


def em_kernel_supports(s, x, eps: float, n_probe: int = 32, seed: int = 0,
                       cutoff: RankCutoff = DEFAULT_CUTOFF, tol: float = 1e-8) -> SupportReport:
    """Supports of the forward and backward Euler-Maruyama kernels at ``x``.

    Forward: ``x + eps b(x) + im D``. Backward: ``{y : x in y + eps b(y) + im D}``.
    When ``y -> N (y + eps b(y))`` is affine (``N`` projects off ``im D``),
    the backward support is returned as an exact affine set; otherwise it is
    described by probe points obtained by Gauss-Newton projection of random
    candidates. ``disjoint`` is true when the two supports differ, which for
    kernels with nondegenerate densities on them means mutual singularity.
    """
    if not eps > 0:
        raise ValueError(f"time step must be positive, got {eps}")
    sde = s.as_sde()
    if sde.sigma_fn is not None:
        raise ValueError("support computation is unsupported for state-dependent volatility")
    x = np.asarray(x, dtype=float)
    d = sde.dim
    E = _orth(sde.sigma_const, cutoff)  # im D = im sigma
    N = np.eye(d) - E @ E.T
    fwd = AffineSet(x + eps * sde.drift(x), E)

    def h(y):
        return (y + eps * sde.drift(y)) @ N.T

    rng = np.random.default_rng(seed)
    scale = 1.0 + np.linalg.norm(x)
    cands = x + scale * rng.standard_normal((n_probe, d))
    # affinity test: finite-difference Jacobians agree at all candidates
    def jac(y, step=1e-6):
        cols = [(h(y + step * e) - h(y - step * e)) / (2 * step) for e in np.eye(d)]
        return np.array(cols).T

    J0 = jac(cands[0])
    affine = all(np.linalg.norm(jac(c) - J0) <= 1e-5 * (1 + np.linalg.norm(J0)) for c in cands[1:4])
    affine = affine and np.allclose(h(cands[1]) - h(cands[0]), (cands[1] - cands[0]) @ J0.T,
                                    atol=1e-6 * scale)
    target = x @ N.T
    if affine:
        # y in backward support  <=>  J0 y = N x - h(0); finite differences
        # are only accurate to ~1e-9, so truncate the SVD at that level
        J0 = N @ J0
        c0 = h(np.zeros(d))
        u, sv, vt = np.linalg.svd(J0)
        keep = sv > 1e-7 * max(sv.max(initial=0.0), 1.0)
        Jp = (vt[keep].T / sv[keep]) @ u[:, keep].T
        J0 = (u[:, keep] * sv[keep]) @ vt[keep]
        y0 = Jp @ (target - c0)
        if np.linalg.norm(J0 @ y0 - (target - c0)) > tol * (1 + np.linalg.norm(target)):
            back, probes = None, np.zeros((0, d))
            return SupportReport(fwd, back, probes, True)
        back = AffineSet(y0, vt[~keep].T)
        probes = y0 + (cands - y0) @ (back.basis @ back.basis.T).T
        return SupportReport(fwd, back, probes, not fwd.same_as(back, tol))

    probes = []
    for y in cands:
        for _ in range(50):
            r = h(y) - target
            if np.linalg.norm(r) <= 1e-12 * scale:
                break
            y = y - pseudo_inverse(jac(y), cutoff) @ r
        if np.linalg.norm(h(y) - target) <= tol * scale:
            probes.append(y)
    probes = np.array(probes).reshape(-1, d)
    in_fwd = all(fwd.contains(y, tol) for y in probes)
    fwd_pts = fwd.point + scale * rng.standard_normal((n_probe, fwd.dim)) @ fwd.basis.T
    in_back = all(np.linalg.norm(h(y) - target) <= tol * scale for y in fwd_pts)
    return SupportReport(fwd, None, probes, not (in_fwd and in_back and len(probes) > 0))
