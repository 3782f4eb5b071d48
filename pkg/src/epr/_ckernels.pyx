# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; mirrors ``_pykernels`` function by function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, floor

cnp.import_array()


def affine_recursion(const double[:, ::1] A, const double[:, ::1] L, const double[:, ::1] X0,
                     const double[:, :, ::1] Z):
    """x_{k+1} = A x_k + L z_k for every path."""
    cdef Py_ssize_t P = Z.shape[0], T = Z.shape[1], r = Z.shape[2], d = A.shape[0]
    cdef Py_ssize_t p, k, i, j
    cdef double acc
    out_arr = np.empty((P, T + 1, d))
    cdef double[:, :, ::1] out = out_arr
    for p in range(P):
        for i in range(d):
            out[p, 0, i] = X0[p, i]
        for k in range(T):
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc = acc + A[i, j] * out[p, k, j]
                for j in range(r):
                    acc = acc + L[i, j] * Z[p, k, j]
                out[p, k + 1, i] = acc
    return out_arr


cdef inline void _grad(int kind, const double[:, ::1] K, double a, double b, double kk,
                       double[::1] q, double[::1] g) noexcept nogil:
    cdef Py_ssize_t n = q.shape[0], i, j
    cdef double acc
    if kind == 0:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc = acc + K[i, j] * q[j]
            g[i] = acc
    elif kind == 1:
        for i in range(n):
            g[i] = 4.0 * a * q[i] * (q[i] * q[i] - b)
    else:
        for i in range(n):
            g[i] = kk * sin(kk * q[i])


def bbk_native(int kind, const double[:, ::1] K, double a, double b, double kk,
               const double[::1] m_inv, double gamma, double noise, double eps,
               const double[:, ::1] X0, const double[:, :, ::1] W1, const double[:, :, ::1] W2):
    """BBK splitting with a registry potential.

    ``kind``: 0 quadratic (K), 1 double well (a, b), 2 cosine (kk).
    ``W1``/``W2`` hold already-scaled N(0, eps/2) draws; ``noise`` is
    sqrt(2 gamma / beta).
    """
    cdef Py_ssize_t P = W1.shape[0], T = W1.shape[1], n = W1.shape[2]
    cdef Py_ssize_t p, k, i
    cdef double h = 0.5 * eps
    out_arr = np.empty((P, T + 1, 2 * n))
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] q = np.empty(n), pm = np.empty(n), g = np.empty(n)
    for p in range(P):
        for i in range(n):
            q[i] = X0[p, i]
            pm[i] = X0[p, n + i]
            out[p, 0, i] = q[i]
            out[p, 0, n + i] = pm[i]
        _grad(kind, K, a, b, kk, q, g)
        for k in range(T):
            for i in range(n):
                pm[i] = pm[i] - g[i] * h - gamma * m_inv[i] * pm[i] * h + noise * W1[p, k, i]
                q[i] = q[i] + m_inv[i] * pm[i] * eps
            _grad(kind, K, a, b, kk, q, g)
            for i in range(n):
                pm[i] = pm[i] - g[i] * h - gamma * m_inv[i] * pm[i] * h + noise * W2[p, k, i]
                out[p, k + 1, i] = q[i]
                out[p, k + 1, n + i] = pm[i]
    return out_arr


def bin_index(const double[:, ::1] X, const double[::1] lo, const double[::1] hi, const cnp.int64_t[::1] nbins):
    """Row-major flat bin index per state; -1 outside the grid."""
    cdef Py_ssize_t N = X.shape[0], d = X.shape[1], s, i
    cdef cnp.int64_t flat, idx
    cdef double u
    out_arr = np.empty(N, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    for s in range(N):
        flat = 0
        for i in range(d):
            u = (X[s, i] - lo[i]) / (hi[i] - lo[i]) * nbins[i]
            if not (u >= 0.0 and u < nbins[i]):
                flat = -1
                break
            idx = <cnp.int64_t>floor(u)
            if idx >= nbins[i]:
                idx = nbins[i] - 1
            flat = flat * nbins[i] + idx
        out[s] = flat
    return out_arr
