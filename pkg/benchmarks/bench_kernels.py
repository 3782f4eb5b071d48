"""Compare the compiled and pure-Python kernels on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best wall time per backend, the speedup
and the largest absolute difference between the two outputs.
"""
import argparse
import time

import numpy as np

from epr import _core


def _best(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def workloads():
    rng = np.random.default_rng(0)
    d, r, P, T = 4, 2, 20, 5000
    A = np.eye(d) - 0.05 * rng.standard_normal((d, d))
    A /= 1.01 * np.max(np.abs(np.linalg.eigvals(A)))
    L = 0.3 * rng.standard_normal((d, r))
    X0_aff, Z_aff = rng.standard_normal((P, d)), rng.standard_normal((P, T, r))
    yield "affine_recursion", lambda b: _core.affine_recursion(A, L, X0_aff, Z_aff, backend=b)

    n = 2
    K = np.array([[2.0, 0.3], [0.3, 1.0]])
    X0 = np.tile([0.5, -0.2, 0.1, 0.3], (P, 1))
    W1, W2 = rng.standard_normal((2, P, T, n))
    for name, kind, a, bb, kk in (("bbk quadratic", 0, 0.0, 0.0, 0.0), ("bbk double_well", 1, 1.0, 1.0, 0.0),
                                  ("bbk cosine", 2, 0.0, 0.0, 2.0)):
        yield name, (lambda kind, a, bb, kk: lambda b: _core.bbk_native(
            kind, K, a, bb, kk, np.ones(n), 1.0, 1.0, 0.05, X0, W1, W2, backend=b))(kind, a, bb, kk)

    X = rng.standard_normal((10**6, 2)) * 1.5
    lo, hi, nb = np.full(2, -4.0), np.full(2, 4.0), np.array([30, 30], dtype=np.int64)
    yield "bin_index", lambda b: _core.bin_index(X, lo, hi, nb, backend=b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = _core.available_backends()
    print(f"backends: {', '.join(backends)} (default {_core.BACKEND})")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for name, fn in workloads():
        res = {b: _best(lambda: fn(b), args.repeat) for b in backends}
        row = f"{name:<18}" + "".join(f"{res[b][0] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) > 1:
            speed = res["python"][0] / res["cython"][0]
            diff = float(np.max(np.abs(np.asarray(res["python"][1], float) - np.asarray(res["cython"][1], float))))
            row += f"{speed:>9.1f}x{diff:>12.1e}"
        print(row)


if __name__ == "__main__":
    main()
