import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ortho_group

from epr.gaussian import GaussianDist, kl_gaussian, psd_sqrt_factor, sample, support_projector

from conftest import random_spd


def test_validation():
    with pytest.raises(ValueError):
        GaussianDist([0.0, 0.0], np.eye(3))
    with pytest.raises(ValueError, match="symmetric"):
        GaussianDist([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError, match="positive semi-definite"):
        GaussianDist([0.0, 0.0], np.diag([1.0, -1.0]))
    g = GaussianDist([0.0], [[1.0]])
    with pytest.raises(ValueError):
        g.mean[0] = 1.0


def test_kl_examples():
    g = GaussianDist([0.3, -1.0], [[2.0, 0.4], [0.4, 1.0]])
    assert kl_gaussian(g, g) == 0.0
    assert kl_gaussian(GaussianDist([0.0], [[1.0]]), GaussianDist([1.0], [[1.0]])) == pytest.approx(0.5, rel=1e-14)
    p0 = GaussianDist([0.0, 0.0], np.diag([1.0, 0.0]))
    p1 = GaussianDist([1.0, 0.0], np.diag([1.0, 0.0]))
    assert kl_gaussian(p0, p1) == pytest.approx(0.5, rel=1e-14)
    with pytest.raises(ValueError):
        kl_gaussian(GaussianDist([0.0], [[1.0]]), p0)


def test_kl_infinite_cases():
    line = GaussianDist([0.0, 0.0], np.diag([1.0, 0.0]))
    full = GaussianDist([0.0, 0.0], np.eye(2))
    other_line = GaussianDist([0.0, 0.0], np.diag([0.0, 1.0]))
    shifted = GaussianDist([0.0, 1.0], np.diag([1.0, 0.0]))
    assert kl_gaussian(full, line) == np.inf            # support not included
    assert kl_gaussian(line, other_line) == np.inf      # disjoint supports
    assert kl_gaussian(line, shifted) == np.inf         # mean offset off the support
    assert kl_gaussian(line, full) == np.inf            # lower-dimensional support is a null set
    assert np.isfinite(kl_gaussian(full, GaussianDist([1.0, 2.0], 2 * np.eye(2))))


def test_kl_both_zero_covariance():
    z = GaussianDist([1.0, 2.0], np.zeros((2, 2)))
    assert kl_gaussian(z, z) == 0.0
    assert kl_gaussian(z, GaussianDist([1.0, 2.5], np.zeros((2, 2)))) == np.inf


@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_kl_nonnegative_and_zero_iff_equal(d, seed):
    rng = np.random.default_rng(seed)
    S0, S1 = random_spd(rng, d), random_spd(rng, d)
    m0, m1 = rng.standard_normal(d), rng.standard_normal(d)
    p0, p1 = GaussianDist(m0, S0), GaussianDist(m1, S1)
    assert kl_gaussian(p0, p1) > 0
    assert kl_gaussian(p0, GaussianDist(m0, S0)) == pytest.approx(0.0, abs=1e-12)


@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_kl_rotation_invariance(d, seed, r):
    rng = np.random.default_rng(seed)
    r = min(r, d)
    F = rng.standard_normal((d, r))
    S0 = F @ F.T + 0.1 * np.eye(d)
    S1 = F @ np.diag(rng.uniform(0.5, 2, r)) @ F.T + 0.2 * np.eye(d)
    m0, m1 = rng.standard_normal(d), rng.standard_normal(d)
    U = ortho_group.rvs(d, random_state=seed) if d > 1 else np.array([[-1.0]])
    a = kl_gaussian(GaussianDist(m0, S0), GaussianDist(m1, S1))
    b = kl_gaussian(GaussianDist(U @ m0, U @ S0 @ U.T), GaussianDist(U @ m1, U @ S1 @ U.T))
    assert b == pytest.approx(a, rel=1e-8, abs=1e-10)


def test_kl_degenerate_matches_marginal(rng):
    # on a common 2D support inside R^3 the KL equals the KL of the 2D coordinates
    V = np.linalg.qr(rng.standard_normal((3, 3)))[0][:, :2]
    A0, A1 = random_spd(rng, 2), random_spd(rng, 2)
    c0, c1 = rng.standard_normal(2), rng.standard_normal(2)
    full = kl_gaussian(GaussianDist(V @ c0, V @ A0 @ V.T), GaussianDist(V @ c1, V @ A1 @ V.T))
    red = kl_gaussian(GaussianDist(c0, A0), GaussianDist(c1, A1))
    assert full == pytest.approx(red, rel=1e-9)


def test_sample_examples():
    g = GaussianDist([1.0, -2.0], np.zeros((2, 2)))
    x = sample(g, 50, seed=1)
    assert np.all(x == g.mean)
    n = 10**5
    x = sample(GaussianDist([0.0, 0.0], np.eye(2)), n, seed=2)
    assert np.all(np.abs(x.mean(axis=0)) < 4 / np.sqrt(n))
    x = GaussianDist([0.5, 3.0], np.diag([1.0, 0.0])).sample(100, seed=3)
    assert np.all(x[:, 1] == 3.0)


def test_sample_reproducible():
    g = GaussianDist([0.0, 0.0], [[1.0, 0.3], [0.3, 2.0]])
    np.testing.assert_array_equal(sample(g, 10, 7), sample(g, 10, 7))
    assert not np.array_equal(sample(g, 10, 7), sample(g, 10, 8))


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_sample_covariance(d):
    rng = np.random.default_rng(d)
    F = rng.standard_normal((d, max(d - 1, 1)))
    cov = F @ F.T
    x = sample(GaussianDist(np.zeros(d), cov), 10**5, seed=d)
    emp = np.cov(x.T).reshape(d, d)
    assert np.linalg.norm(emp - cov) <= 0.05 * np.linalg.norm(cov)


def test_support_projector_examples():
    np.testing.assert_allclose(support_projector(np.eye(2)), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(support_projector(GaussianDist([0, 0], np.diag([3.0, 0.0]))), np.diag([1.0, 0.0]))
    np.testing.assert_allclose(support_projector(np.ones((2, 2))), np.full((2, 2), 0.5), atol=1e-15)


@given(st.integers(1, 5), st.integers(0, 5), st.integers(0, 2**32 - 1))
def test_support_projector_idempotent(d, r, seed):
    F = np.random.default_rng(seed).standard_normal((d, min(r, d)))
    P = support_projector(F @ F.T)
    assert np.allclose(P @ P, P, atol=1e-8) and np.allclose(P, P.T, atol=1e-8)
    assert np.allclose(psd_sqrt_factor(F @ F.T) @ psd_sqrt_factor(F @ F.T).T, F @ F.T, atol=1e-10)


def _mc_kl(p0, p1, n, seed):
    x = sample(p0, n, seed)
    v = p0.logpdf(x) - p1.logpdf(x)
    return v.mean(), v.std(ddof=1) / np.sqrt(n)


@pytest.mark.parametrize("seed", range(5))
def test_kl_monte_carlo_small(seed):
    rng = np.random.default_rng(100 + seed)
    d = 1 + seed % 3
    p0 = GaussianDist(rng.standard_normal(d), random_spd(rng, d))
    p1 = GaussianDist(rng.standard_normal(d), random_spd(rng, d))
    mc, se = _mc_kl(p0, p1, 10**5, seed)
    assert abs(kl_gaussian(p0, p1) - mc) <= 4 * se
