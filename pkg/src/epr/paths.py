"""Sampled trajectories and the per-path random streams that produce them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("exact", "euler_maruyama", "bbk")

# noise blocks are generated for at most this many floats at once
_CHUNK_FLOATS = 1 << 22


class ExplosionError(RuntimeError):
    def __init__(self, path: int, step: int):
        super().__init__(f"non-finite state in path {path} at step {step}")
        self.path = path
        self.step = step


@dataclass(frozen=True)
class SamplePaths:
    """States ``data[path, step, :]`` observed every ``eps`` time units."""

    data: np.ndarray
    eps: float
    seed: int
    scheme: str

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("data must have shape (n_paths, n_steps + 1, dim)")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def reversed(self) -> "SamplePaths":
        """Every path read backward in time."""
        return SamplePaths(self.data[:, ::-1].copy(), self.eps, self.seed, self.scheme)


NOISE_STREAM = 0
INIT_STREAM = 1


def path_rng(seed: int, path_index: int, stream: int = NOISE_STREAM) -> np.random.Generator:
    """Independent PCG64 stream ``SeedSequence(seed, spawn_key=(path_index, stream))``.

    Stream 0 feeds the step noise and stream 1 the initial state, so the
    noise of a path does not depend on how it was started, nor on how
    paths are chunked or scheduled.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def path_chunks(n_paths: int, floats_per_path: int):
    """Yield ``range`` objects covering all paths in memory-bounded blocks."""
    size = max(1, _CHUNK_FLOATS // max(floats_per_path, 1))
    for start in range(0, n_paths, size):
        yield range(start, min(start + size, n_paths))


def check_finite(data: np.ndarray, offset: int = 0) -> None:
    bad = ~np.isfinite(data).all(axis=2)
    if bad.any():
        path, step = np.argwhere(bad)[0]
        raise ExplosionError(int(path) + offset, int(step))


def resolve_x0(x0, dim: int, n_paths: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        if x0.size != dim:
            raise ValueError(f"x0 must have {dim} entries")
        return np.broadcast_to(x0, (n_paths, dim)).copy()
    if x0.shape != (n_paths, dim):
        raise ValueError(f"x0 must have shape ({dim},) or ({n_paths}, {dim})")
    return x0.copy()
