import numpy as np
import pytest
from hypothesis import given, strategies as st

from epr import _core
from epr.exact import chain_stationary_cov, kernel, simulate_exact
from epr.gaussian import GaussianDist, kl_gaussian
from epr.integrate import (
    ExplosionError,
    bbk_recursion_matrices,
    em_kernel_supports,
    em_recursion_matrices,
    simulate_bbk,
    simulate_em,
)
from epr.model import NonlinearSDE, UnderdampedLangevin, langevin_as_linear, potential

from conftest import random_spd, random_stable_model, theta_model

SQ2 = np.sqrt(2.0)
seeds = st.integers(0, 2**32 - 1)


def _quad_langevin(n=1, K=None, M=None, gamma=1.0, beta=1.0):
    K = np.eye(n) if K is None else K
    M = np.ones(n) if M is None else M
    return UnderdampedLangevin(potential("quadratic", K=K), M, gamma, beta, n)


# --- Euler-Maruyama -------------------------------------------------------

def test_em_brownian_increments():
    s = NonlinearSDE(lambda x: 0 * x, np.eye(1), 1)
    eps = 0.02
    sp = simulate_em(s, np.zeros(1), eps, 10**4, 10, seed=1)
    inc = np.diff(sp.data[..., 0], axis=1).ravel()
    assert abs(inc.var() / eps - 1) < 0.05


def test_em_deterministic_euler():
    s = NonlinearSDE(lambda x: -x, np.zeros((1, 1)), 1)
    eps = 0.1
    sp = simulate_em(s, np.ones(1), eps, 30, 1, seed=0)
    np.testing.assert_allclose(sp.data[0, :, 0], (1 - eps) ** np.arange(31), rtol=1e-13)


def test_em_linear_stationary_covariance():
    m = theta_model(1.0)
    sp = simulate_em(m, "stationary", 0.01, 20000, 20, seed=2)
    emp = np.cov(sp.data.reshape(-1, 2).T)
    assert np.linalg.norm(emp - m.Sigma_stat) <= 0.1 * np.linalg.norm(m.Sigma_stat)


def test_em_step_law_matches_analytic_gaussian(rng):
    m = random_stable_model(rng, 3)
    eps = 0.05
    G, W = em_recursion_matrices(m, eps)
    x = rng.standard_normal(3)
    step = GaussianDist(x + eps * m.drift(x), eps * m.sigma @ m.sigma.T)
    assert kl_gaussian(step, GaussianDist(G @ x, W)) <= 1e-12
    # and the simulator's one-step draws follow that law
    sp = simulate_em(m, np.tile(x, (20000, 1)), eps, 1, 20000, seed=3)
    y = sp.data[:, 1]
    np.testing.assert_allclose(y.mean(axis=0), G @ x, atol=4 * np.sqrt(W.diagonal().max() / 20000))
    assert np.linalg.norm(np.cov(y.T) - W) <= 0.05 * np.linalg.norm(W)


def test_em_explosion_is_reported():
    s = NonlinearSDE(lambda x: x**3, np.eye(1), 1)
    with pytest.raises(ExplosionError) as info:
        simulate_em(s, np.full(1, 5.0), 0.5, 100, 2, seed=0)
    assert "path" in str(info.value) and "step" in str(info.value)


def test_em_state_dependent_sigma():
    s = NonlinearSDE(lambda x: -x, np.eye(1), 1, sigma_fn=lambda x: np.ones(x.shape + (1,)) * 0.0)
    sp = simulate_em(s, np.ones(1), 0.1, 5, 1, seed=0)
    np.testing.assert_allclose(sp.data[0, :, 0], 0.9 ** np.arange(6))


def test_em_reproducible():
    m = theta_model(0.5)
    a = simulate_em(m, "stationary", 0.1, 40, 3, seed=5)
    b = simulate_em(m, "stationary", 0.1, 40, 3, seed=5)
    np.testing.assert_array_equal(a.data, b.data)
    c = simulate_em(m, "stationary", 0.1, 40, 1, seed=5, path_offset=2)
    np.testing.assert_array_equal(a.data[2:], c.data)
    with pytest.raises(ValueError):
        simulate_em(m, "stationary", -0.1, 4, 1, seed=0)


# --- BBK ------------------------------------------------------------------

def test_bbk_energy_drift_second_order():
    L = _quad_langevin(gamma=1e-300)  # effectively frictionless and noiseless
    drifts = []
    for eps in (0.04, 0.02, 0.01):
        steps = int(round(10 / eps))
        sp = simulate_bbk(L, np.array([1.0, 0.0]), eps, steps, 1, seed=0)
        q, p = sp.data[0, :, 0], sp.data[0, :, 1]
        H = 0.5 * q**2 + 0.5 * p**2
        drifts.append(np.abs(H - H[0]).max())
    slope = np.polyfit(np.log([0.04, 0.02, 0.01]), np.log(drifts), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_bbk_canonical_covariance():
    K = np.array([[2.0, 0.5], [0.5, 1.0]])
    M = np.array([1.0, 2.0])
    beta = 2.0
    L = _quad_langevin(2, K, M, gamma=1.5, beta=beta)
    sp = simulate_bbk(L, "stationary", 0.05, 10**5, 10, seed=4)
    emp = np.cov(sp.data.reshape(-1, 4).T)
    ref = np.block([[np.linalg.inv(K) / beta, np.zeros((2, 2))], [np.zeros((2, 2)), np.diag(M) / beta]])
    assert np.linalg.norm(emp - ref) <= 0.1 * np.linalg.norm(ref)


def test_bbk_free_momentum_variance():
    L = UnderdampedLangevin(potential("quadratic", K=np.zeros((1, 1))), np.ones(1), 1.0, 1.0, 1)
    sp = simulate_bbk(L, np.zeros(2), 0.05, 10**5, 10, seed=6, burn_in=200)
    assert abs(sp.data[..., 1].var() - 1.0) < 0.05


def test_bbk_linear_recursion_stationary_covariance():
    # discrete Lyapunov solve on the recursion matrices is the oracle
    L = _quad_langevin()
    eps = 0.2
    G, W = bbk_recursion_matrices(L, np.eye(1), eps)
    S = chain_stationary_cov(G, W)
    sp = simulate_bbk(L, "stationary", eps, 20000, 50, seed=8, burn_in=200)
    X = sp.data
    per_path = np.einsum("pti,ptj->pij", X, X) / X.shape[1]
    est = per_path.mean(axis=0)
    se = per_path.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
    assert np.all(np.abs(est - S) <= 3 * se + 1e-12)


def test_bbk_recursion_matches_simulator_mean():
    L = _quad_langevin(gamma=0.7)
    eps = 0.1
    G, W = bbk_recursion_matrices(L, np.eye(1), eps)
    x = np.array([0.3, -0.7])
    sp = simulate_bbk(L, np.tile(x, (40000, 1)), eps, 1, 40000, seed=9)
    y = sp.data[:, 1]
    np.testing.assert_allclose(y.mean(axis=0), G @ x, atol=4 * np.sqrt(W.diagonal().max() / 40000))
    assert np.linalg.norm(np.cov(y.T) - W) <= 0.05 * np.linalg.norm(W)


def test_bbk_one_step_converges_to_exact_kernel():
    L = _quad_langevin()
    m = langevin_as_linear(L, np.eye(1))
    eps_list = np.array([0.08, 0.04, 0.02, 0.01])
    errs = []
    for eps in eps_list:
        G, W = bbk_recursion_matrices(L, np.eye(1), eps)
        k = kernel(m, eps)
        errs.append(np.linalg.norm(G - k.mean_map) + np.linalg.norm(W - k.cov))
    slope = np.polyfit(np.log(eps_list), np.log(errs), 1)[0]
    assert slope >= 1.9


def test_bbk_callable_matches_registry():
    L = _quad_langevin()
    a = simulate_bbk(L, "stationary", 0.1, 100, 3, seed=1)
    custom = UnderdampedLangevin(lambda q: q @ np.eye(1), np.ones(1), 1.0, 1.0, 1)
    b = simulate_bbk(custom, a.data[:, 0], 0.1, 100, 3, seed=1)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("name,params", [("double_well", {"a": 1.0, "b": 1.0}), ("cosine", {"k": 2.0})])
def test_bbk_backends_agree(name, params):
    L = UnderdampedLangevin(potential(name, **params), np.array([1.0, 2.0]), 0.5, 1.0, 2)
    x0 = np.array([[0.5, -0.3, 0.1, 0.2]] * 3)
    runs = [simulate_bbk(L, x0, 0.05, 200, 3, seed=2, backend=b).data for b in _core.available_backends()]
    for r in runs[1:]:
        np.testing.assert_allclose(r, runs[0], rtol=1e-12, atol=1e-12)


def test_bbk_requires_quadratic_for_stationary_start():
    L = UnderdampedLangevin(potential("double_well", a=1.0, b=1.0), np.ones(1), 1.0, 1.0, 1)
    with pytest.raises(ValueError):
        simulate_bbk(L, "stationary", 0.1, 10, 1, seed=0)


def test_bbk_reproducible():
    L = _quad_langevin()
    a = simulate_bbk(L, "stationary", 0.1, 50, 4, seed=3, burn_in=10)
    b = simulate_bbk(L, "stationary", 0.1, 50, 4, seed=3, burn_in=10)
    np.testing.assert_array_equal(a.data, b.data)
    assert a.data.shape == (4, 51, 2) and a.scheme == "bbk"


# --- supports ---------------------------------------------------------------

def test_supports_elliptic_overlap(rng):
    m = theta_model(1.0)
    rep = em_kernel_supports(m, rng.standard_normal(2), 0.1)
    assert not rep.disjoint


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
def test_supports_underdamped_disjoint(eps, rng):
    L = _quad_langevin()
    x = rng.standard_normal(2)
    rep = em_kernel_supports(L, x, eps)
    assert rep.disjoint
    q, p = x
    # forward: y_q = q + eps p ; backward: y_q + eps y_p = q
    assert rep.forward.contains(np.array([q + eps * p, 7.0]))
    assert not rep.forward.contains(np.array([q + eps * p + 0.1, 7.0]))
    assert rep.backward is not None
    for yp in (-3.0, 0.0, 2.5):
        assert rep.backward.contains(np.array([q - eps * yp, yp]))
    assert not rep.backward.contains(np.array([q + 1.0, 0.0]))


def test_supports_nonlinear_langevin_disjoint(rng):
    L = UnderdampedLangevin(potential("double_well", a=1.0, b=1.0), np.ones(1), 1.0, 1.0, 1)
    rep = em_kernel_supports(L, np.array([0.4, -0.2]), 0.1)
    assert rep.disjoint


def test_supports_reject_state_dependent_sigma():
    s = NonlinearSDE(lambda x: -x, np.eye(1), 1, sigma_fn=lambda x: np.ones(x.shape + (1,)))
    with pytest.raises(ValueError):
        em_kernel_supports(s, np.zeros(1), 0.1)


@given(st.integers(1, 4), seeds)
def test_affine_recursion_backends_agree(d, seed):
    rng = np.random.default_rng(seed)
    A, L = rng.standard_normal((d, d)) / d, rng.standard_normal((d, 2))
    X0, Z = rng.standard_normal((3, d)), rng.standard_normal((3, 20, 2))
    runs = [_core.affine_recursion(A, L, X0, Z, backend=b) for b in _core.available_backends()]
    for r in runs[1:]:
        np.testing.assert_allclose(r, runs[0], rtol=1e-12, atol=1e-12)


def test_pure_python_fallback_selected_by_env():
    import os
    import subprocess
    import sys
    env = dict(os.environ, EPR_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from epr import _core; print(_core.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    assert out == "python"


@pytest.mark.parametrize("backend", _core.available_backends())
def test_batching_does_not_change_paths(backend):
    m = theta_model(0.5)
    whole = simulate_em(m, "stationary", 0.1, 60, 5, seed=9, backend=backend).data
    parts = [simulate_em(m, "stationary", 0.1, 60, k, seed=9, backend=backend, path_offset=o).data
             for o, k in ((0, 2), (2, 3))]
    np.testing.assert_array_equal(np.concatenate(parts), whole)
    L = _quad_langevin()
    whole = simulate_bbk(L, "stationary", 0.1, 60, 5, seed=9, backend=backend).data
    parts = [simulate_bbk(L, "stationary", 0.1, 60, k, seed=9, backend=backend, path_offset=o).data
             for o, k in ((0, 2), (2, 3))]
    np.testing.assert_array_equal(np.concatenate(parts), whole)
