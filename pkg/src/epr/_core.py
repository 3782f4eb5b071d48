"""Backend selection for the inner loops.

The compiled extension is used when importable, unless the environment
variable ``EPR_PURE_PYTHON`` is set to a non-empty value other than ``0``.
"""
import os

import numpy as np

from . import _pykernels

_force_pure = os.environ.get("EPR_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure python requested")
    from . import _ckernels as _native
    BACKEND = "cython"
except ImportError:
    _native = None
    BACKEND = "python"


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None for the default)."""
    if name is None:
        name = BACKEND
    if name == "python":
        return _pykernels
    if name == "cython":
        if _native is None:
            raise ImportError("compiled kernels are not available")
        return _native
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["cython"] if _native is not None else [])


def affine_recursion(A, L, X0, Z, backend=None):
    k = get_backend(backend)
    return k.affine_recursion(*(np.ascontiguousarray(v, dtype=float) for v in (A, L, X0, Z)))


def bbk_native(kind, K, a, b, kk, m_inv, gamma, noise, eps, X0, W1, W2, backend=None):
    k = get_backend(backend)
    c = lambda v: np.ascontiguousarray(v, dtype=float)
    return k.bbk_native(int(kind), c(K), float(a), float(b), float(kk), c(m_inv), float(gamma),
                        float(noise), float(eps), c(X0), c(W1), c(W2))


def bin_index(X, lo, hi, nbins, backend=None):
    k = get_backend(backend)
    return k.bin_index(np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(lo, dtype=float),
                       np.ascontiguousarray(hi, dtype=float), np.ascontiguousarray(nbins, dtype=np.int64))
