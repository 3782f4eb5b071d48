"""
Model-free entropy production from sampled trajectories.

States are binned on a uniform grid and consecutive bin pairs counted.
With ``F`` the joint frequencies of forward pairs ``(x_k, x_{k+1})`` and
``R`` those of reversed pairs ``(theta x_{k+1}, theta x_k)`` (``theta`` the
identity for plain time reversal) the estimate is

    e_p(eps) ~ (1/eps) sum_ij F_ij log(F_ij / R_ij).

Samples outside the grid are dropped, never clipped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _core
from .paths import SamplePaths

DEFAULT_BIN_CAP = 10**6
DEFAULT_PSEUDOCOUNT = 0.5
DEFAULT_BOOTSTRAP = 200


@dataclass(frozen=True)
class BinGrid:
    """Uniform grid on the box ``[lo, hi)`` with ``bins_per_axis[i]`` cells on axis ``i``."""

    lo: np.ndarray
    hi: np.ndarray
    bins_per_axis: np.ndarray
    cap: int = DEFAULT_BIN_CAP

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        nb = np.atleast_1d(np.asarray(self.bins_per_axis))
        d = max(lo.size, hi.size, nb.size)
        lo, hi = np.broadcast_to(lo, (d,)).copy(), np.broadcast_to(hi, (d,)).copy()
        if np.any(nb != np.round(nb)) or np.any(nb < 1):
            raise ValueError("bins_per_axis must be positive integers")
        nb = np.broadcast_to(nb.astype(np.int64), (d,)).copy()
        if not np.all(lo < hi):
            raise ValueError("grid needs lo < hi on every axis")
        total = int(np.prod(nb.astype(float)))
        if total > self.cap:
            raise ValueError(f"grid has {total} bins, above the cap of {self.cap}")
        for name, v in (("lo", lo), ("hi", hi), ("bins_per_axis", nb)):
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    @classmethod
    def uniform(cls, dim: int, lo: float, hi: float, bins: int, cap: int = DEFAULT_BIN_CAP) -> "BinGrid":
        return cls(np.full(dim, lo), np.full(dim, hi), np.full(dim, bins), cap)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.bins_per_axis))

    def index(self, X: np.ndarray, backend: str | None = None) -> np.ndarray:
        """Flat row-major bin index of each state; -1 outside the grid."""
        X = np.asarray(X, dtype=float)
        flat = _core.bin_index(X.reshape(-1, self.dim), self.lo, self.hi, self.bins_per_axis, backend=backend)
        return flat.reshape(X.shape[:-1])

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lo) & (X < self.hi), axis=-1)


# --------------------------------------------------------------------------
# transition counts


class _PathCounts(NamedTuple):
    """Sparse per-unit counts: ``count`` transitions of pair ``key`` in unit ``unit``."""

    unit: np.ndarray
    key: np.ndarray
    count: np.ndarray


def _count_pairs(a: np.ndarray, b: np.ndarray, n_bins: int) -> _PathCounts:
    """Count pairs ``(a[u, k], b[u, k])`` per unit ``u``, skipping pairs with a -1."""
    n_units = a.shape[0]
    ok = (a >= 0) & (b >= 0)
    unit = np.broadcast_to(np.arange(n_units)[:, None], a.shape)[ok]
    key = a[ok] * n_bins + b[ok]
    # unit is monotone, so one composite sort groups (unit, key)
    comp = unit.astype(np.int64) * (n_bins * n_bins) + key if n_bins * n_bins * max(n_units, 1) < 2**62 else None
    if comp is not None:
        u, c = np.unique(comp, return_counts=True)
        return _PathCounts(u // (n_bins * n_bins), u % (n_bins * n_bins), c)
    order = np.lexsort((key, unit))
    unit, key = unit[order], key[order]
    new = np.r_[True, (unit[1:] != unit[:-1]) | (key[1:] != key[:-1])]
    starts = np.flatnonzero(new)
    c = np.diff(np.r_[starts, len(unit)])
    return _PathCounts(unit[starts], key[starts], c)


def _units(idx: np.ndarray, n_units: int | None) -> np.ndarray:
    """Reshape (paths, steps+1) indices into bootstrap units of whole path segments.

    Consecutive segments share their boundary state so no transition is lost.
    """
    P, T1 = idx.shape
    T = T1 - 1
    if n_units is None or n_units <= P or T < 2:
        return idx
    per = min(int(np.ceil(n_units / P)), T)
    seg = int(np.ceil(T / per))
    ext = np.full((P, seg * per + 1), -1, dtype=idx.dtype)
    ext[:, :T1] = idx
    out = np.stack([ext[:, s * seg: s * seg + seg + 1] for s in range(per)], axis=1)
    return out.reshape(P * per, seg + 1)


@dataclass(frozen=True)
class EmpiricalChain:
    """Observed bin-to-bin transition counts at lag ``eps``.

    ``keys`` encode pairs as ``i * n_bins + j``; ``fwd`` and ``rev`` hold
    per-unit sparse counts of forward and reversed pairs. For plain time
    reversal ``rev`` is the transpose of ``fwd``.
    """

    grid: BinGrid
    eps: float
    fwd: _PathCounts = field(repr=False)
    rev: _PathCounts = field(repr=False)
    n_units: int
    n_dropped: int
    n_samples: int
    visited: np.ndarray = field(repr=False)

    @property
    def occupied_bins(self) -> int:
        return int(self.visited.size)

    @property
    def n_transitions(self) -> int:
        return int(self.fwd.count.sum())

    def counts(self) -> dict[tuple[int, int], int]:
        """Total forward counts as ``{(i, j): n}``."""
        nb = self.grid.n_bins
        keys, cnt = _aggregate(self.fwd)
        return {(int(k // nb), int(k % nb)): int(c) for k, c in zip(keys, cnt)}

    def merge(self, other: "EmpiricalChain") -> "EmpiricalChain":
        """Pool two chains on the same grid; the result does not depend on the order."""
        if other.grid != self.grid or other.eps != self.eps:
            raise ValueError("can only merge chains with equal grid and eps")
        shift = self.n_units

        def cat(a: _PathCounts, b: _PathCounts) -> _PathCounts:
            return _PathCounts(np.r_[a.unit, b.unit + shift], np.r_[a.key, b.key], np.r_[a.count, b.count])

        return EmpiricalChain(self.grid, self.eps, cat(self.fwd, other.fwd), cat(self.rev, other.rev),
                              self.n_units + other.n_units, self.n_dropped + other.n_dropped,
                              self.n_samples + other.n_samples, np.union1d(self.visited, other.visited))

    __add__ = merge


def _aggregate(pc: _PathCounts) -> tuple[np.ndarray, np.ndarray]:
    keys, inv = np.unique(pc.key, return_inverse=True)
    return keys, np.bincount(inv, weights=pc.count).astype(np.int64)


def _transpose(pc: _PathCounts, n_bins: int) -> _PathCounts:
    i, j = pc.key // n_bins, pc.key % n_bins
    return _PathCounts(pc.unit, j * n_bins + i, pc.count)


def _check_dim(paths: SamplePaths, grid: BinGrid):
    if paths.dim != grid.dim:
        raise ValueError(f"paths have dimension {paths.dim}, grid has {grid.dim}")


def bin_transitions(paths: SamplePaths, grid: BinGrid, n_units: int | None = None,
                    backend: str | None = None) -> EmpiricalChain:
    """Count consecutive bin pairs over all paths.

    ``n_units`` asks for at least that many bootstrap units; long paths are
    then cut into contiguous segments.
    """
    _check_dim(paths, grid)
    idx = grid.index(paths.data, backend=backend)
    n_dropped = int(np.sum(idx < 0))
    occupied = np.unique(idx[idx >= 0])
    u = _units(idx, n_units)
    fwd = _count_pairs(u[:, :-1], u[:, 1:], grid.n_bins)
    return EmpiricalChain(grid, paths.eps, fwd, _transpose(fwd, grid.n_bins), u.shape[0],
                          n_dropped, int(idx.size), occupied)


def _as_involution(involution) -> Callable[[np.ndarray], np.ndarray]:
    if callable(involution):
        return involution
    P = np.asarray(involution, dtype=float)
    return lambda X: X @ P.T


def bin_transitions_generalized(paths: SamplePaths, involution, grid: BinGrid,
                                n_units: int | None = None, n_probe: int = 256,
                                backend: str | None = None) -> EmpiricalChain:
    """Forward pairs ``(x_k, x_{k+1})`` against reversed pairs ``(theta x_{k+1}, theta x_k)``."""
    _check_dim(paths, grid)
    theta = _as_involution(involution)
    X = paths.data
    flat = X.reshape(-1, paths.dim)
    probe = flat[np.linspace(0, len(flat) - 1, min(n_probe, len(flat))).astype(int)]
    back = theta(theta(probe))
    if np.max(np.abs(back - probe)) > 1e-9 * (1 + np.max(np.abs(probe))):
        raise ValueError("map is not an involution on the probe set")
    inside = grid.contains(probe)
    if not np.all(grid.contains(theta(probe[inside]))):
        raise ValueError("involution does not map the grid region into itself")
    idx = grid.index(X, backend=backend)
    tidx = grid.index(theta(flat).reshape(X.shape), backend=backend)
    n_dropped = int(np.sum(idx < 0))
    occupied = np.unique(idx[idx >= 0])
    u = _units(idx, n_units)
    tu = _units(tidx, n_units)
    fwd = _count_pairs(u[:, :-1], u[:, 1:], grid.n_bins)
    rev = _count_pairs(tu[:, 1:], tu[:, :-1], grid.n_bins)
    return EmpiricalChain(grid, paths.eps, fwd, rev, u.shape[0], n_dropped, int(idx.size), occupied)


# --------------------------------------------------------------------------
# estimator


@dataclass(frozen=True)
class EpEstimate:
    """Binned entropy production with diagnostics.

    ``value`` is the plug-in estimate (``inf`` in strict mode when a one-way
    pair exists). When bootstrapped, ``stderr`` and the basic 95% interval
    ``(lo95, hi95)`` come from path-block resampling and ``bias_corrected``
    is ``2 value - mean(replicates)``.
    """

    value: float
    is_infinite: bool
    one_way_pairs: int
    occupied_bins: int
    n_transitions: int
    pseudocount_used: float
    n_dropped: int = 0
    stderr: float = float("nan")
    lo95: float = float("nan")
    hi95: float = float("nan")
    bias_corrected: float = float("nan")
    n_boot: int = 0


class _Arrays(NamedTuple):
    keys: np.ndarray       # union support
    f_key: np.ndarray      # index into keys, per fwd record
    r_key: np.ndarray
    f: np.ndarray          # totals over union support
    r: np.ndarray


def _align(chain: EmpiricalChain) -> _Arrays:
    keys = np.union1d(chain.fwd.key, chain.rev.key)
    fk = np.searchsorted(keys, chain.fwd.key)
    rk = np.searchsorted(keys, chain.rev.key)
    f = np.bincount(fk, weights=chain.fwd.count, minlength=keys.size)
    r = np.bincount(rk, weights=chain.rev.count, minlength=keys.size)
    return _Arrays(keys, fk, rk, f, r)


def _plugin(f: np.ndarray, r: np.ndarray, eps: float, alpha: float | None) -> tuple[float, int]:
    """Plug-in rate from forward/reversed count vectors on a common key set."""
    one_way = int(np.sum((f > 0) & (r == 0)))
    if alpha is None:
        if one_way:
            return np.inf, one_way
        m = f > 0
        fp = f[m] / f.sum()
        rp = r[m] / r.sum()
        return max(float(np.sum(fp * np.log(fp / rp)) / eps), 0.0), one_way
    sup = (f > 0) | (r > 0)
    fa = f[sup] + alpha
    ra = r[sup] + alpha
    fp = fa / fa.sum()
    rp = ra / ra.sum()
    return max(float(np.sum(fp * np.log(fp / rp)) / eps), 0.0), one_way


def _parse_mode(mode) -> float | None:
    if mode is None or mode == "strict":
        return None
    if mode == "pseudocount":
        return DEFAULT_PSEUDOCOUNT
    if isinstance(mode, tuple) and mode[0] == "pseudocount":
        return float(mode[1])
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        if mode < 0:
            raise ValueError("pseudocount must be nonnegative")
        return float(mode)
    raise ValueError(f"unknown mode {mode!r}; use 'strict', 'pseudocount' or ('pseudocount', alpha)")


def ep_binned(chain: EmpiricalChain, mode="strict", n_boot: int = 0, seed: int = 0) -> EpEstimate:
    """Plug-in entropy production of the empirical chain.

    ``mode`` is ``"strict"`` (a one-way pair makes the estimate infinite),
    ``"pseudocount"`` (alpha = 0.5) or ``("pseudocount", alpha)``: alpha is
    added to both directions of every pair seen in either direction.
    ``n_boot > 0`` adds a block bootstrap over the chain's units.
    """
    if chain.n_transitions == 0:
        raise ValueError("empty chain: no transitions inside the grid")
    alpha = _parse_mode(mode)
    arr = _align(chain)
    value, one_way = _plugin(arr.f, arr.r, chain.eps, alpha)
    est = EpEstimate(
        value=value,
        is_infinite=bool(np.isinf(value)),
        one_way_pairs=one_way,
        occupied_bins=chain.occupied_bins,
        n_transitions=chain.n_transitions,
        pseudocount_used=0.0 if alpha is None else alpha,
        n_dropped=chain.n_dropped,
    )
    if n_boot > 0:
        est = _bootstrap(chain, arr, est, alpha, n_boot, seed)
    return est


def _bootstrap(chain: EmpiricalChain, arr: _Arrays, est: EpEstimate, alpha, n_boot: int, seed: int) -> EpEstimate:
    rng = np.random.default_rng(seed)
    n = chain.n_units
    reps = np.empty(n_boot)
    fw = chain.fwd.count.astype(float)
    rw = chain.rev.count.astype(float)
    for b in range(n_boot):
        w = rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
        f = np.bincount(arr.f_key, weights=w[chain.fwd.unit] * fw, minlength=arr.keys.size)
        r = np.bincount(arr.r_key, weights=w[chain.rev.unit] * rw, minlength=arr.keys.size)
        reps[b] = _plugin(f, r, chain.eps, alpha)[0]
    if not np.all(np.isfinite(reps)) or est.is_infinite:
        return EpEstimate(**{**est.__dict__, "stderr": np.inf, "lo95": est.value, "hi95": np.inf,
                             "bias_corrected": est.value, "n_boot": n_boot})
    v = est.value
    q_lo, q_hi = np.quantile(reps, [0.025, 0.975])
    return EpEstimate(**{**est.__dict__,
                         "stderr": float(np.std(reps, ddof=1)),
                         "lo95": float(2 * v - q_hi),
                         "hi95": float(2 * v - q_lo),
                         "bias_corrected": float(2 * v - reps.mean()),
                         "n_boot": n_boot})


def ep_binned_generalized(paths: SamplePaths, involution, grid: BinGrid, mode="strict",
                          n_boot: int = 0, seed: int = 0, n_units: int | None = None,
                          backend: str | None = None) -> EpEstimate:
    """Binned entropy production against the involution image of the reversed chain.

    ``involution`` is a callable on (..., d) arrays or a d x d matrix.
    With the identity this equals :func:`ep_binned` on the same data.
    """
    chain = bin_transitions_generalized(paths, involution, grid, n_units=n_units, backend=backend)
    return ep_binned(chain, mode, n_boot=n_boot, seed=seed)


def estimate(paths: SamplePaths, grid: BinGrid, mode="strict", involution=None, n_boot: int = 0,
             seed: int = 0, n_units: int | None = None, backend: str | None = None) -> EpEstimate:
    """Convenience wrapper: plain or generalised binned estimate of ``paths``."""
    if involution is None:
        chain = bin_transitions(paths, grid, n_units=n_units, backend=backend)
    else:
        chain = bin_transitions_generalized(paths, involution, grid, n_units=n_units, backend=backend)
    return ep_binned(chain, mode, n_boot=n_boot, seed=seed)


# --------------------------------------------------------------------------
# epsilon sweeps


class CurvePoint(NamedTuple):
    eps: float
    estimate: EpEstimate
    analytic: float          # nan when no closed form is available
    n_samples: int


CSV_COLUMNS = ("eps", "estimate", "lo95", "hi95", "analytic_ep_eps", "one_way_pairs",
               "occupied_bins", "n_dropped", "bias_corrected", "stderr")


def _analytic(model, scheme: str, eps: float, involution) -> float:
    from .exact import ep_eps, ep_gaussian_chain
    from .integrate import bbk_recursion_matrices, em_recursion_matrices
    from .model import LinearDiffusion, Potential, UnderdampedLangevin, langevin_as_linear

    P = None if involution is None or callable(involution) else np.asarray(involution, dtype=float)
    if callable(involution) and P is None:
        return float("nan")
    lin = model
    if isinstance(model, UnderdampedLangevin):
        if not (isinstance(model.grad_V, Potential) and model.grad_V.name == "quadratic"):
            return float("nan")
        K = model.grad_V.params["K"]
        if scheme == "bbk":
            return ep_gaussian_chain(*bbk_recursion_matrices(model, K, eps), eps, P)
        lin = langevin_as_linear(model, K)
    if not isinstance(lin, LinearDiffusion):
        return float("nan")
    if scheme == "exact":
        return ep_eps(lin, eps, involution=P)
    if scheme == "euler_maruyama":
        return ep_gaussian_chain(*em_recursion_matrices(lin, eps), eps, P)
    return float("nan")


def _simulator(model, scheme: str):
    from .exact import simulate_exact
    from .integrate import simulate_bbk, simulate_em
    from .model import LinearDiffusion, Potential, UnderdampedLangevin, langevin_as_linear

    scheme = {"em": "euler_maruyama"}.get(scheme, scheme)
    if scheme == "exact":
        if isinstance(model, UnderdampedLangevin):
            if not (isinstance(model.grad_V, Potential) and model.grad_V.name == "quadratic"):
                raise ValueError("exact simulation needs a linear model")
            model = langevin_as_linear(model, model.grad_V.params["K"])
        if not isinstance(model, LinearDiffusion):
            raise ValueError("exact simulation needs a linear model")
        return scheme, lambda eps, T, P, seed, off: simulate_exact(model, "stationary", eps, T, P, seed,
                                                                   path_offset=off)
    if scheme == "euler_maruyama":
        return scheme, lambda eps, T, P, seed, off: simulate_em(model, "stationary", eps, T, P, seed,
                                                                path_offset=off)
    if scheme == "bbk":
        if not isinstance(model, UnderdampedLangevin):
            raise ValueError("scheme requires langevin model")
        return scheme, lambda eps, T, P, seed, off: simulate_bbk(
            model, "stationary", eps, T, P, seed, burn_in=int(np.ceil(_BURN_IN_TIME / eps)), path_offset=off)
    raise ValueError(f"unknown scheme {scheme!r}; choose from exact, em, bbk")


_BURN_IN_TIME = 20.0


def ep_curve(model, scheme: str, eps_list, grid: BinGrid, n_samples, seed: int = 0, mode="strict",
             involution=None, n_paths: int = 100, n_boot: int = DEFAULT_BOOTSTRAP,
             batch_paths: int = 25) -> list[CurvePoint]:
    """Simulate at stationarity for each time step and estimate the binned entropy production.

    ``n_samples`` (transitions per step size) is an int or one value per
    entry of ``eps_list``. Paths are simulated ``batch_paths`` at a time and
    their counts merged, so memory stays bounded. BBK runs are started from
    the continuous-time stationary law and burnt in for 20 time units.
    The analytic column is the exact finite-step rate of the scheme when the
    model is linear (``nan`` otherwise).
    """
    eps_list = [float(e) for e in eps_list]
    counts = np.broadcast_to(np.asarray(n_samples), (len(eps_list),))
    scheme, sim = _simulator(model, scheme)
    out = []
    for eps, n in zip(eps_list, counts):
        n_steps = max(int(n) // n_paths, 1)
        chain = None
        for start in range(0, n_paths, batch_paths):
            k = min(batch_paths, n_paths - start)
            paths = sim(eps, n_steps, k, seed, start)
            part = bin_transitions(paths, grid) if involution is None else \
                bin_transitions_generalized(paths, involution, grid)
            chain = part if chain is None else chain.merge(part)
        est = ep_binned(chain, mode, n_boot=n_boot, seed=seed)
        out.append(CurvePoint(eps, est, _analytic(model, scheme, eps, involution), n_steps * n_paths))
    return out


def curve_rows(points: list[CurvePoint]) -> list[dict]:
    """Rows for CSV output, in :data:`CSV_COLUMNS` order."""
    return [dict(eps=p.eps, estimate=p.estimate.value, lo95=p.estimate.lo95, hi95=p.estimate.hi95,
                 analytic_ep_eps=p.analytic, one_way_pairs=p.estimate.one_way_pairs,
                 occupied_bins=p.estimate.occupied_bins, n_dropped=p.estimate.n_dropped,
                 bias_corrected=p.estimate.bias_corrected, stderr=p.estimate.stderr)
            for p in points]
