import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, strategies as st

from epr.linalg import (
    NoStationaryStateError,
    RankCutoff,
    check_symmetric_psd,
    expm,
    log_pseudo_det,
    lyapunov_solve,
    pseudo_det,
    pseudo_inverse,
    rank_of,
    van_loan_covariance,
)

from conftest import random_spd

shapes = st.tuples(st.integers(1, 8), st.integers(1, 8))


@st.composite
def small_matrices(draw):
    """Uniform [-1, 1] entries, optionally forced to a lower rank."""
    m, n = draw(shapes)
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    A = rng.uniform(-1, 1, (m, n))
    if draw(st.booleans()):
        r = draw(st.integers(0, min(m, n)))
        A = rng.uniform(-1, 1, (m, r)) @ rng.uniform(-1, 1, (r, n)) / max(r, 1)
    return A


# --- pseudo-inverse ------------------------------------------------------

def test_pinv_examples():
    np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    np.testing.assert_allclose(pseudo_inverse(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(pseudo_inverse(np.ones((2, 2))), np.full((2, 2), 0.25), atol=1e-15)


def test_pinv_rejects_nonfinite():
    with pytest.raises(ValueError):
        pseudo_inverse(np.array([[np.nan, 0], [0, 1]]))
    with pytest.raises(ValueError):
        rank_of(np.array([[np.inf]]))


@given(small_matrices())
def test_penrose_conditions(A):
    X = pseudo_inverse(A)
    tol = 1e-8 * max(1.0, np.linalg.norm(X))
    assert np.linalg.norm(A @ X @ A - A) <= tol
    assert np.linalg.norm(X @ A @ X - X) <= tol
    assert np.linalg.norm((A @ X).T - A @ X) <= tol
    assert np.linalg.norm((X @ A).T - X @ A) <= tol


def test_cutoff_knob():
    A = np.diag([1.0, 1e-6])
    assert rank_of(A) == 2
    assert rank_of(A, RankCutoff(relative_tolerance=1e-3)) == 1
    with pytest.raises(ValueError):
        RankCutoff(relative_tolerance=-1.0)


# --- rank / pseudo-determinant ----------------------------------------------

def test_rank_examples():
    assert rank_of(np.diag([1.0, 0.0])) == 1
    assert rank_of(np.zeros((3, 2))) == 0
    assert rank_of(np.ones((2, 2))) == 1


def test_pdet_examples():
    assert pseudo_det(np.diag([2.0, 0.0, 3.0])) == pytest.approx(6.0, rel=1e-14)
    assert pseudo_det(np.eye(4)) == pytest.approx(1.0, rel=1e-14)
    assert pseudo_det(np.zeros((2, 2))) == 1.0
    assert log_pseudo_det(np.zeros((2, 2))) == 0.0


def test_pdet_rejects_bad_input():
    with pytest.raises(ValueError, match="symmetric"):
        pseudo_det(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="positive semi-definite"):
        pseudo_det(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        check_symmetric_psd(np.ones((2, 3)))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_pdet_matches_det_on_spd(d, seed):
    S = random_spd(np.random.default_rng(seed), d)
    assert pseudo_det(S) == pytest.approx(np.linalg.det(S), rel=1e-8)


# --- expm -------------------------------------------------------------

def test_expm_examples():
    np.testing.assert_allclose(expm(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(expm(np.diag([0.3, -2.0])), np.diag(np.exp([0.3, -2.0])), rtol=1e-14)
    th = np.pi / 2
    R = expm(np.array([[0.0, th], [-th, 0.0]]))
    np.testing.assert_allclose(R, [[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]], atol=1e-15)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_expm_inverse(d, seed, scale):
    A = np.random.default_rng(seed).uniform(-1, 1, (d, d))
    n = np.linalg.norm(A)
    A = A * (scale / n) if n > 0 else A
    np.testing.assert_allclose(expm(A) @ expm(-A), np.eye(d), atol=1e-9)


# --- Lyapunov -------------------------------------------------------

def test_lyapunov_examples():
    np.testing.assert_allclose(lyapunov_solve(np.eye(2), np.eye(2)), np.eye(2), atol=1e-14)
    th = 1.7
    B = np.array([[1.0, th], [-th, 1.0]])
    np.testing.assert_allclose(lyapunov_solve(B, np.eye(2)), np.eye(2), atol=1e-14)
    with pytest.raises(NoStationaryStateError, match="no stationary state"):
        lyapunov_solve(np.diag([-1.0, 1.0]), np.eye(2))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_lyapunov_residual_and_scipy_oracle(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (d, d))
    # shift the spectrum into the right half plane
    B = A + (abs(np.linalg.eigvals(A).real).max() + 0.2) * np.eye(d)
    S = rng.uniform(-1, 1, (d, d))
    D = S @ S.T
    Sig = lyapunov_solve(B, D)
    assert np.allclose(Sig, Sig.T, atol=1e-12)
    assert np.linalg.eigvalsh(Sig).min() >= -1e-10 * max(1.0, np.linalg.norm(Sig))
    assert np.linalg.norm(B @ Sig + Sig @ B.T - 2 * D) <= 1e-10 * (1 + np.linalg.norm(D))
    # independent route: Bartels-Stewart in scipy solves A X + X A^H = Q
    ref = scipy.linalg.solve_continuous_lyapunov(B, 2 * D)
    np.testing.assert_allclose(Sig, ref, atol=1e-8 * (1 + np.linalg.norm(ref)))


# --- Van Loan -------------------------------------------------------

def test_van_loan_examples():
    D = np.array([[1.0, 0.2], [0.2, 0.5]])
    np.testing.assert_allclose(van_loan_covariance(np.zeros((2, 2)), D, 0.3), 2 * D * 0.3, rtol=1e-13)
    b, s2, eps = 0.7, 1.3, 0.4
    S = van_loan_covariance(np.array([[b]]), np.array([[s2 / 2]]), eps)
    assert S[0, 0] == pytest.approx(s2 * (1 - np.exp(-2 * b * eps)) / (2 * b), rel=1e-12)
    B = np.array([[1.0, 2.0], [-2.0, 1.0]])
    for eps in (1e-4, 1e-6):
        np.testing.assert_allclose(van_loan_covariance(B, D, eps) / eps, 2 * D, rtol=1e-3)
    with pytest.raises(ValueError):
        van_loan_covariance(B, D, 0.0)


def test_van_loan_matches_quadrature(rng):
    # independent oracle: adaptive quadrature of the defining integral
    B = rng.uniform(-1, 1, (3, 3)) + np.eye(3)
    S = rng.uniform(-1, 1, (3, 2))
    D = 0.5 * S @ S.T
    eps = 0.8
    f = lambda s: scipy.linalg.expm(-s * B) @ (2 * D) @ scipy.linalg.expm(-s * B.T)
    ref, _ = scipy.integrate.quad_vec(f, 0.0, eps, epsabs=1e-14, epsrel=1e-12)
    np.testing.assert_allclose(van_loan_covariance(B, D, eps), ref, rtol=1e-10, atol=1e-14)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_van_loan_semigroup(d, seed, e1, e2):
    rng = np.random.default_rng(seed)
    B = rng.uniform(-1, 1, (d, d))
    S = rng.uniform(-1, 1, (d, d))
    D = 0.5 * S @ S.T
    E = expm(-e2 * B)
    lhs = van_loan_covariance(B, D, e1 + e2)
    rhs = E @ van_loan_covariance(B, D, e1) @ E.T + van_loan_covariance(B, D, e2)
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(lhs))
