"""Possibly degenerate Gaussian distributions and their relative entropy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    DEFAULT_CUTOFF,
    RankCutoff,
    check_symmetric_psd,
    log_pseudo_det,
    pseudo_inverse,
    rank_of,
)


@dataclass(frozen=True)
class GaussianDist:
    """Gaussian with a symmetric PSD, possibly singular, covariance."""

    mean: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean {mean.shape} and cov {cov.shape} are inconsistent")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean has non-finite entries")
        cov = check_symmetric_psd(cov, "cov", rtol=1e-10)
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sqrt_factor(self, cutoff: RankCutoff = DEFAULT_CUTOFF) -> np.ndarray:
        """Rank-truncated factor ``L`` (d x r) with ``L L^T = cov``."""
        return psd_sqrt_factor(self.cov, cutoff)

    def sample(self, n: int, seed: int | np.random.Generator,
               cutoff: RankCutoff = DEFAULT_CUTOFF) -> np.ndarray:
        return sample(self, n, seed, cutoff)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log-density on the support; only defined for nonsingular covariance."""
        x = np.atleast_2d(x) - self.mean
        sign, logdet = np.linalg.slogdet(self.cov)
        if sign <= 0:
            raise ValueError("logpdf needs a nonsingular covariance")
        sol = np.linalg.solve(self.cov, x.T).T
        return -0.5 * (np.sum(x * sol, axis=1) + logdet + self.dim * np.log(2 * np.pi))


def psd_sqrt_factor(cov: np.ndarray, cutoff: RankCutoff = DEFAULT_CUTOFF) -> np.ndarray:
    w, V = np.linalg.eigh(cov)
    keep = w > cutoff.threshold(np.abs(w), cov.shape)
    return V[:, keep] * np.sqrt(w[keep])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample(g: GaussianDist, n: int, seed, cutoff: RankCutoff = DEFAULT_CUTOFF) -> np.ndarray:
    """Draw ``n`` samples as an (n, d) array.

    Degenerate directions are reproduced exactly: the noise only enters
    through the eigenvectors whose eigenvalues pass the cutoff.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    L = psd_sqrt_factor(g.cov, cutoff)
    z = _rng(seed).standard_normal((n, L.shape[1]))
    return g.mean + z @ L.T


def support_projector(g: GaussianDist | np.ndarray, cutoff: RankCutoff = DEFAULT_CUTOFF) -> np.ndarray:
    """Orthogonal projector onto the image of the covariance."""
    cov = g.cov if isinstance(g, GaussianDist) else np.asarray(g, dtype=float)
    P = cov @ pseudo_inverse(cov, cutoff)
    return 0.5 * (P + P.T)


def kl_gaussian(p0: GaussianDist, p1: GaussianDist, cutoff: RankCutoff = DEFAULT_CUTOFF) -> float:
    """Relative entropy KL(p0 || p1) between possibly degenerate Gaussians.

    Returns ``inf`` when p0 is not absolutely continuous w.r.t. p1: the
    covariance images differ or the mean offset leaves the support of p1.
    """
    if p0.dim != p1.dim:
        raise ValueError(f"dimension mismatch: {p0.dim} vs {p1.dim}")
    S0, S1 = p0.cov, p1.cov
    S1_pinv = pseudo_inverse(S1, cutoff)
    resid = np.eye(p1.dim) - S1 @ S1_pinv
    dmu = p1.mean - p0.mean
    tol = cutoff.support_tolerance
    scale0 = max(np.linalg.norm(S0), 1e-300)
    if np.linalg.norm(resid @ S0) > tol * scale0:
        return np.inf
    # dmu compared against the spread of p1 on its support
    scale_mu = max(np.sqrt(np.linalg.norm(S1)), np.linalg.norm(dmu), 1e-300)
    if np.linalg.norm(resid @ dmu) > tol * scale_mu:
        return np.inf
    r0 = rank_of(S0, cutoff)
    if r0 < rank_of(S1, cutoff):
        # p0 lives on a strict affine subspace of supp p1, a p1-null set
        return np.inf
    val = 0.5 * (
        np.trace(S1_pinv @ S0)
        - r0
        + log_pseudo_det(S1, cutoff)
        - log_pseudo_det(S0, cutoff)
        + dmu @ S1_pinv @ dmu
    )
    return max(float(val), 0.0) if val > -1e-10 else float(val)
