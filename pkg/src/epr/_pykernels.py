"""Pure numpy versions of the compiled inner loops in ``_ckernels``."""
import numpy as np


def affine_recursion(A, L, X0, Z):
    P, T, _ = Z.shape
    d = A.shape[0]
    out = np.empty((P, T + 1, d))
    out[:, 0] = X0
    # einsum keeps a fixed summation order per row, so results do not depend
    # on how many paths share a batch (BLAS matmul does)
    noise = np.einsum("ptj,ij->pti", Z, L)
    x = np.array(X0, dtype=float)
    for k in range(T):
        x = np.einsum("pj,ij->pi", x, A) + noise[:, k]
        out[:, k + 1] = x
    return out


def _grad(kind, K, a, b, kk, q):
    if kind == 0:
        return np.einsum("pj,ij->pi", q, K)
    if kind == 1:
        return 4.0 * a * q * (q * q - b)
    return kk * np.sin(kk * q)


def bbk_native(kind, K, a, b, kk, m_inv, gamma, noise, eps, X0, W1, W2):
    grad = lambda q: _grad(kind, K, a, b, kk, q)
    return bbk_callable(grad, m_inv, gamma, noise, eps, X0, W1, W2)


def bbk_callable(grad, m_inv, gamma, noise, eps, X0, W1, W2):
    """BBK splitting for an arbitrary vectorised gradient ``grad(q)``."""
    P, T, n = W1.shape
    h = 0.5 * eps
    out = np.empty((P, T + 1, 2 * n))
    q = np.array(X0[:, :n], dtype=float)
    p = np.array(X0[:, n:], dtype=float)
    out[:, 0, :n] = q
    out[:, 0, n:] = p
    g = grad(q)
    for k in range(T):
        p = p - g * h - gamma * m_inv * p * h + noise * W1[:, k]
        q = q + m_inv * p * eps
        g = grad(q)
        p = p - g * h - gamma * m_inv * p * h + noise * W2[:, k]
        out[:, k + 1, :n] = q
        out[:, k + 1, n:] = p
    return out


def bin_index(X, lo, hi, nbins):
    u = (X - lo) / (hi - lo) * nbins
    inside = np.all((u >= 0.0) & (u < nbins), axis=1)
    idx = np.minimum(np.floor(np.where(inside[:, None], u, 0.0)).astype(np.int64), nbins - 1)
    flat = np.zeros(len(X), dtype=np.int64)
    for i in range(X.shape[1]):
        flat = flat * nbins[i] + idx[:, i]
    flat[~inside] = -1
    return flat
