"""Time grids, Brownian increment ensembles and the binary two-noise tree."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgument, ResourceLimitError

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "TreeNoise",
    "make_grid",
    "sample_paths",
    "enumerate_tree",
    "forward_ito_integral",
    "backward_ito_integral",
    "MAX_TREE_DEPTH",
]

MAX_TREE_DEPTH = 12
# Above this depth the full 4^N scenario table is not materialized.
MAX_MATERIALIZED_DEPTH = 8

_W_TAG = 0
_B_TAG = 1


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidArgument(f"horizon must be positive, got {self.T}")
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise InvalidArgument(f"number of steps must be a positive integer, got {self.N}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t


def make_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(T, N)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Monte Carlo increments ``dW[j, k]``, ``dB[j, k]`` for path ``j``, step ``k``."""

    grid: TimeGrid
    seed: int
    dW: np.ndarray
    dB: np.ndarray

    @property
    def count(self) -> int:
        return self.dW.shape[0]

    @cached_property
    def W(self) -> np.ndarray:
        """Brownian path values at the grid nodes, shape ``(count, N + 1)``."""
        out = np.zeros((self.count, self.grid.N + 1))
        np.cumsum(self.dW, axis=1, out=out[:, 1:])
        return out

    def to_rows(self):
        t = self.grid.nodes
        for j in range(self.count):
            for k in range(self.grid.N):
                yield j, k, t[k], self.dW[j, k], self.dB[j, k]


def _stream(seed: int, tag: int, path: int) -> np.random.Generator:
    # One counter-based Philox stream per (path, noise); step k is the k-th draw.
    ss = np.random.SeedSequence(seed, spawn_key=(tag, path))
    return np.random.Generator(np.random.Philox(ss))


def _fill(seed, N, sd, start, stop, dW, dB):
    for j in range(start, stop):
        dW[j] = _stream(seed, _W_TAG, j).standard_normal(N) * sd
        dB[j] = _stream(seed, _B_TAG, j).standard_normal(N) * sd


def sample_paths(grid: TimeGrid, count: int, seed: int, threads: int = 1) -> PathEnsemble:
    """Draw independent Gaussian increments with variance ``grid.dt``.

    Every path and noise owns its own stream, so the output does not depend
    on ``threads``.
    """
    if count < 1:
        raise InvalidArgument("path count must be at least 1")
    if seed < 0:
        raise InvalidArgument("seed must be nonnegative")
    N, sd = grid.N, np.sqrt(grid.dt)
    dW = np.empty((count, N))
    dB = np.empty((count, N))
    threads = max(1, min(int(threads), count))
    if threads == 1:
        _fill(seed, N, sd, 0, count, dW, dB)
    else:
        bounds = np.linspace(0, count, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            jobs = [pool.submit(_fill, seed, N, sd, a, b, dW, dB)
                    for a, b in zip(bounds, bounds[1:])]
            for job in jobs:
                job.result()
    dW.setflags(write=False)
    dB.setflags(write=False)
    return PathEnsemble(grid, seed, dW, dB)


def sign_table(n: int) -> np.ndarray:
    """All ``2^n`` sign sequences; row index bits give the signs, first step most significant."""
    idx = np.arange(2**n)[:, None]
    shifts = np.arange(n - 1, -1, -1)[None, :]
    return 2.0 * ((idx >> shifts) & 1) - 1.0


@dataclass(frozen=True)
class TreeNoise:
    """Exhaustive binary model of ``(W, B)`` on a grid.

    Scenarios are all ``4^N`` pairs of sign sequences with equal weight;
    increments are ``sign * sqrt(dt)``.  Scenario ``(iw, ib)`` uses the bits
    of ``iw`` and ``ib`` (first step most significant) for the signs.
    """

    grid: TimeGrid

    @property
    def depth(self) -> int:
        return self.grid.N

    @property
    def n_scenarios(self) -> int:
        return 4**self.grid.N

    @property
    def weight(self) -> float:
        return 0.25**self.grid.N

    @cached_property
    def w_paths(self) -> np.ndarray:
        """All ``2^N`` W increment sequences, shape ``(2^N, N)``."""
        return sign_table(self.grid.N) * np.sqrt(self.grid.dt)

    def w_values(self, k: int) -> np.ndarray:
        """``W(t_k)`` for every W-prefix of length ``k`` (index order as ``w_paths``)."""
        if k == 0:
            return np.zeros(1)
        return sign_table(k).sum(axis=1) * np.sqrt(self.grid.dt)

    def scenarios(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Materialize ``(dW, dB, weights)`` with one row per scenario."""
        if self.grid.N > MAX_MATERIALIZED_DEPTH:
            raise ResourceLimitError(
                f"materializing 4^{self.grid.N} scenarios exceeds depth {MAX_MATERIALIZED_DEPTH}")
        paths = self.w_paths
        n = paths.shape[0]
        dW = np.repeat(paths, n, axis=0)
        dB = np.tile(paths, (n, 1))
        return dW, dB, np.full(n * n, self.weight)


def enumerate_tree(grid: TimeGrid) -> TreeNoise:
    if grid.N > MAX_TREE_DEPTH:
        raise ResourceLimitError(
            f"tree depth {grid.N} exceeds the enumeration bound {MAX_TREE_DEPTH}")
    return TreeNoise(grid)


def _check_lengths(integrand, incr):
    integrand = np.asarray(integrand, dtype=float)
    incr = np.asarray(incr, dtype=float)
    if integrand.shape[-1] != incr.shape[-1]:
        raise InvalidArgument(
            f"integrand has {integrand.shape[-1]} values but there are {incr.shape[-1]} increments")
    return integrand, incr


def forward_ito_integral(integrand, incr):
    """Left-endpoint sum ``sum_k integrand[k] * incr[k]``; ``integrand`` holds values at t_0..t_{N-1}."""
    integrand, incr = _check_lengths(integrand, incr)
    return np.sum(integrand * incr, axis=-1)


def backward_ito_integral(integrand, incr):
    """Right-endpoint sum; ``integrand`` holds values at t_1..t_N, paired with ``incr[k]`` on [t_k, t_{k+1}]."""
    integrand, incr = _check_lengths(integrand, incr)
    return np.sum(integrand * incr, axis=-1)
