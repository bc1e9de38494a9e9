"""Filtered state/adjoint system, its Riccati decoupling and the equilibrium feedback.

Conditioning the coupled state/adjoint system on the W-generated
information removes every d^B term and leaves

    dx  = (Fxx x + FxY Y + FxZ Z + fx) dt + (Gxx x + GxY Y + GxZ Z + gx) dW
    dY  = (FYx x + FYY Y + FYZ Z + fY) dt + Z dW
    Y(T) = GT x(T) + (kappa0 + kappa1 W(T)) e1,   x(0) = K Y(0)

for ``x = (y~, p~1, p~2)``, ``Y = (Y~, q~1, q~2)``, ``Z = (Z~, qbar~1, qbar~2)``.
It is decoupled through ``Y = P x + h0 + h1 W``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DecouplingBreakdown, InvalidArgument, RiccatiBlowup, UnsupportedConfiguration
from .hamiltonian import assemble_adjoint_system
from .model import LqGameSpec
from .noise import PathEnsemble, TimeGrid

__all__ = [
    "LinearFbsdeSystem",
    "RiccatiSolution",
    "FilteredTrajectories",
    "FeedbackPolicy",
    "assemble_filtering_system",
    "solve_decoupling",
    "simulate_filtered",
    "synthesize_equilibrium",
    "decoupling_residual",
    "ResidualStats",
    "COND_LIMIT",
    "BLOWUP_LIMIT",
]

COND_LIMIT = 1e12
BLOWUP_LIMIT = 1e8

BLOCK_NAMES = ("Fxx", "FxY", "FxZ", "fx", "Gxx", "GxY", "GxZ", "gx", "FYx", "FYY", "FYZ", "fY")


@dataclass(frozen=True)
class LinearFbsdeSystem:
    """Linear forward-backward system; every block is a callable of ``t``."""

    n: int
    horizon: float
    Fxx: Callable
    FxY: Callable
    FxZ: Callable
    fx: Callable
    Gxx: Callable
    GxY: Callable
    GxZ: Callable
    gx: Callable
    FYx: Callable
    FYY: Callable
    FYZ: Callable
    fY: Callable
    GT: np.ndarray
    K: np.ndarray
    kappa0: float = 0.0
    kappa1: float = 0.0

    @classmethod
    def constant(cls, n: int, horizon: float, GT=None, K=None, kappa0=0.0, kappa1=0.0,
                 **blocks) -> "LinearFbsdeSystem":
        """System with time-independent blocks; omitted blocks are zero."""
        unknown = set(blocks) - set(BLOCK_NAMES)
        if unknown:
            raise InvalidArgument(f"unknown blocks {sorted(unknown)}")
        fns = {}
        for name in BLOCK_NAMES:
            shape = (n,) if name[0] in "fg" else (n, n)
            value = np.broadcast_to(np.asarray(blocks.get(name, 0.0), dtype=float), shape).copy()
            fns[name] = lambda t, v=value: v
        GT = np.zeros((n, n)) if GT is None else np.atleast_2d(np.asarray(GT, dtype=float))
        K = np.zeros((n, n)) if K is None else np.atleast_2d(np.asarray(K, dtype=float))
        return cls(n=n, horizon=float(horizon), GT=GT, K=K, kappa0=kappa0, kappa1=kappa1, **fns)

    def blocks(self, t: float) -> dict[str, np.ndarray]:
        return {name: getattr(self, name)(t) for name in BLOCK_NAMES}


def assemble_filtering_system(spec: LqGameSpec, check: bool = True) -> LinearFbsdeSystem:
    """Filtered system of the LQ game under W-generated information."""
    if spec.info != "w-filtration":
        raise UnsupportedConfiguration(
            f"filtering requires info='w-filtration', got {spec.info!r}")
    adj = assemble_adjoint_system(spec, check=check)
    return LinearFbsdeSystem(
        n=adj.n, horizon=adj.horizon,
        Fxx=adj.Fxx, FxY=adj.FxY, FxZ=adj.FxZ, fx=adj.fx,
        Gxx=adj.Gxx, GxY=adj.GxY, GxZ=adj.GxZ, gx=adj.gx,
        FYx=lambda t: -adj.A2(t), FYY=lambda t: -adj.A1(t),
        FYZ=lambda t: -adj.A3(t), fY=lambda t: -adj.ahat(t),
        GT=adj.GT, K=adj.K, kappa0=adj.kappa0, kappa1=adj.kappa1,
    )


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Decoupling field on a grid.

    ``P[k]``, ``h0[k]``, ``h1[k]`` are the values at node ``t_k``; ``Lam``,
    ``M1``, ``MW``, ``M0`` give ``Z = Lam (M1 x + MW W + M0)`` at each node.
    """

    grid: TimeGrid
    P: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    Lam: np.ndarray
    M1: np.ndarray
    MW: np.ndarray
    M0: np.ndarray
    x0: np.ndarray
    max_cond_lambda: float
    cond_initial: float
    max_abs_P: float

    def backward(self, k: int, x: np.ndarray, W) -> np.ndarray:
        """``Y`` at node ``k`` for forward states ``x`` of shape ``(paths, n)``."""
        return _apply(self.P[k], x) + self.h0[k] + np.asarray(W)[..., None] * self.h1[k]

    def martingale(self, k: int, x: np.ndarray, W) -> np.ndarray:
        inner = _apply(self.M1[k], x) + np.asarray(W)[..., None] * self.MW[k] + self.M0[k]
        return _apply(self.Lam[k], inner)


def _apply(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Row-wise A @ x[j] with a fixed summation order, so results do not
    # depend on how paths are batched.
    return (x[..., None, :] * A).sum(axis=-1)


def _decoupling_terms(b, P, h1, h0, cond_limit=COND_LIMIT):
    n = P.shape[0]
    lam_inv = np.eye(n) - P @ b["GxZ"]
    cond = np.linalg.cond(lam_inv)
    if not np.isfinite(cond) or cond > cond_limit:
        raise DecouplingBreakdown(f"I - P GxZ is singular (condition number {cond:.3g})")
    Lam = np.linalg.inv(lam_inv)
    M1 = P @ (b["Gxx"] + b["GxY"] @ P)
    MW = P @ b["GxY"] @ h1
    M0 = P @ (b["GxY"] @ h0 + b["gx"]) + h1
    return lam_inv, Lam, M1, MW, M0


def _rhs(b, P, h1, h0, cond_limit):
    lam_inv, Lam, M1, MW, M0 = _decoupling_terms(b, P, h1, h0, cond_limit)
    cond = np.linalg.cond(lam_inv)
    lead = b["FYZ"] - P @ b["FxZ"]
    drift = b["FYY"] - P @ b["FxY"]
    dP = b["FYx"] + b["FYY"] @ P - P @ b["Fxx"] - P @ b["FxY"] @ P + lead @ Lam @ M1
    dh1 = drift @ h1 + lead @ Lam @ MW
    dh0 = drift @ h0 + lead @ Lam @ M0 + b["fY"] - P @ b["fx"]
    return dP, dh1, dh0, cond


def solve_decoupling(sys: LinearFbsdeSystem, grid: TimeGrid, cond_limit: float = COND_LIMIT,
                     blowup_limit: float = BLOWUP_LIMIT) -> RiccatiSolution:
    """Integrate ``P``, ``h1``, ``h0`` backward from ``T`` with classical RK4.

    Raises
    ------
    DecouplingBreakdown
        If ``I - P GxZ`` or ``I - K P(0)`` has condition number above ``cond_limit``.
    RiccatiBlowup
        If any entry of ``P`` exceeds ``blowup_limit`` in magnitude.
    """
    if abs(grid.T - sys.horizon) > 1e-12 * max(1.0, sys.horizon):
        raise InvalidArgument("grid horizon does not match the system horizon")
    n, N, dt = sys.n, grid.N, grid.dt
    t = grid.nodes
    e1 = np.zeros(n)
    e1[0] = 1.0
    P = np.empty((N + 1, n, n))
    h1 = np.empty((N + 1, n))
    h0 = np.empty((N + 1, n))
    P[N] = sys.GT
    h1[N] = sys.kappa1 * e1
    h0[N] = sys.kappa0 * e1
    max_cond = 1.0
    cache = {}

    def blocks(tt):
        if tt not in cache:
            cache[tt] = sys.blocks(tt)
        return cache[tt]

    def rhs(tt, p, a, c):
        nonlocal max_cond
        with np.errstate(over="ignore", invalid="ignore"):  # blowup is reported below
            out = _rhs(blocks(tt), p, a, c, cond_limit)
        max_cond = max(max_cond, out[3])
        return out[:3]

    h = -dt
    for k in range(N, 0, -1):
        tk, p, a, c = t[k], P[k], h1[k], h0[k]
        k1 = rhs(tk, p, a, c)
        k2 = rhs(tk + h / 2, p + h / 2 * k1[0], a + h / 2 * k1[1], c + h / 2 * k1[2])
        k3 = rhs(tk + h / 2, p + h / 2 * k2[0], a + h / 2 * k2[1], c + h / 2 * k2[2])
        k4 = rhs(t[k - 1], p + h * k3[0], a + h * k3[1], c + h * k3[2])
        P[k - 1] = p + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        h1[k - 1] = a + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        h0[k - 1] = c + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        peak = np.max(np.abs(P[k - 1]))
        if not np.isfinite(peak) or peak > blowup_limit:
            raise RiccatiBlowup(f"|P| reached {peak:.3g} at t={t[k - 1]:.6g}")
        cache.pop(tk, None)

    Lam = np.empty((N + 1, n, n))
    M1 = np.empty((N + 1, n, n))
    MW = np.empty((N + 1, n))
    M0 = np.empty((N + 1, n))
    for k in range(N + 1):
        lam_inv, Lam[k], M1[k], MW[k], M0[k] = _decoupling_terms(sys.blocks(t[k]), P[k], h1[k], h0[k], cond_limit)
        max_cond = max(max_cond, np.linalg.cond(lam_inv))
    if max_cond > cond_limit:
        raise DecouplingBreakdown(f"I - P GxZ is singular (condition number {max_cond:.3g})")

    coupling = np.eye(n) - sys.K @ P[0]
    cond0 = np.linalg.cond(coupling)
    if not np.isfinite(cond0) or cond0 > cond_limit:
        raise DecouplingBreakdown(f"I - K P(0) is singular (condition number {cond0:.3g})")
    x0 = np.linalg.solve(coupling, sys.K @ h0[0])
    for arr in (P, h0, h1, Lam, M1, MW, M0, x0):
        arr.setflags(write=False)
    return RiccatiSolution(grid, P, h0, h1, Lam, M1, MW, M0, x0,
                           float(max_cond), float(cond0), float(np.max(np.abs(P))))


@dataclass(frozen=True, eq=False)
class FilteredTrajectories:
    """Arrays of shape ``(paths, N + 1, n)`` (``W`` is ``(paths, N + 1)``)."""

    grid: TimeGrid
    x: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    W: np.ndarray


def _as_increments(paths) -> np.ndarray:
    return paths.dW if isinstance(paths, PathEnsemble) else np.atleast_2d(np.asarray(paths, float))


def _simulate_chunk(ric, sys, dW):
    grid = ric.grid
    N, dt, t = grid.N, grid.dt, grid.nodes
    m, n = dW.shape[0], sys.n
    x = np.empty((m, N + 1, n))
    Y = np.empty((m, N + 1, n))
    Z = np.empty((m, N + 1, n))
    W = np.zeros((m, N + 1))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    x[:, 0] = ric.x0
    for k in range(N + 1):
        xk, wk = x[:, k], W[:, k]
        Y[:, k] = ric.backward(k, xk, wk)
        Z[:, k] = ric.martingale(k, xk, wk)
        if k == N:
            break
        b = sys.blocks(t[k])
        drift = _apply(b["Fxx"], xk) + _apply(b["FxY"], Y[:, k]) + _apply(b["FxZ"], Z[:, k]) + b["fx"]
        vol = _apply(b["Gxx"], xk) + _apply(b["GxY"], Y[:, k]) + _apply(b["GxZ"], Z[:, k]) + b["gx"]
        x[:, k + 1] = xk + drift * dt + vol * dW[:, k, None]
    return x, Y, Z, W


def simulate_filtered(ric: RiccatiSolution, sys: LinearFbsdeSystem, paths,
                      threads: int = 1) -> FilteredTrajectories:
    """Euler-Maruyama pass for ``x`` with ``Y`` and ``Z`` read off the decoupling field.

    ``paths`` is a :class:`PathEnsemble` or an array of W increments of
    shape ``(paths, N)``.
    """
    dW = _as_increments(paths)
    if dW.shape[1] != ric.grid.N:
        raise InvalidArgument("path increments do not match the Riccati grid")
    threads = max(1, min(int(threads), dW.shape[0]))
    if threads == 1:
        parts = [_simulate_chunk(ric, sys, dW)]
    else:
        bounds = np.linspace(0, dW.shape[0], threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ab: _simulate_chunk(ric, sys, dW[ab[0]:ab[1]]),
                                  zip(bounds, bounds[1:])))
    x, Y, Z, W = (np.concatenate(arrs) for arrs in zip(*parts))
    return FilteredTrajectories(ric.grid, x, Y, Z, W)


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Controls ``u_i = gain_i[k] * p~_i + offset_i[k]`` at node ``t_k``."""

    grid: TimeGrid
    gain1: np.ndarray
    gain2: np.ndarray
    offset1: np.ndarray
    offset2: np.ndarray

    def __post_init__(self):
        for name in ("gain1", "gain2", "offset1", "offset2"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float),
                                  (self.grid.N + 1,)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def controls(self, k, p1, p2):
        return (self.gain1[k] * p1 + self.offset1[k], self.gain2[k] * p2 + self.offset2[k])

    def __call__(self, t, p1, p2):
        k = int(round(t / self.grid.dt))
        return self.controls(k, p1, p2)

    def shifted(self, offset1=0.0, offset2=0.0) -> "FeedbackPolicy":
        return FeedbackPolicy(self.grid, self.gain1, self.gain2,
                              self.offset1 + offset1, self.offset2 + offset2)

    def swapped(self) -> "FeedbackPolicy":
        """Exchange the players' feedback laws."""
        return FeedbackPolicy(self.grid, self.gain2, self.gain1, self.offset2, self.offset1)

    def rows(self):
        for k, tk in enumerate(self.grid.nodes):
            yield k, tk, self.gain1[k], self.gain2[k], self.offset1[k], self.offset2[k]


def synthesize_equilibrium(ric: RiccatiSolution, spec: LqGameSpec) -> FeedbackPolicy:
    """Candidate equilibrium ``u_i = -a_{2+i} p~_i / e_i7`` on the Riccati grid."""
    t = ric.grid.nodes
    zero = np.zeros_like(t)
    return FeedbackPolicy(ric.grid, spec.control_gain(1, t) + zero,
                          spec.control_gain(2, t) + zero, zero, zero)


@dataclass(frozen=True)
class ResidualStats:
    """Accumulated defect ``D_k = sum_{j<k} r_j`` (``rms``, ``max``) and raw one-step ``r_k``."""

    rms: float
    max: float
    step_rms: float
    step_max: float


def decoupling_residual(ric: RiccatiSolution, sys: LinearFbsdeSystem, paths,
                        threads: int = 1) -> ResidualStats:
    """Defect of the discrete backward dynamics along simulated filtered paths.

    ``r_k = Y_{k+1} - Y_k - (FYx x + FYY Y + FYZ Z + fY)_k dt - Z_k dW_k``.
    The headline statistics use the running sum of ``r_k``, which measures
    how far the reconstructed ``Y`` drifts from an Euler solution of its own
    equation and converges at first order in ``dt``.
    """
    traj = simulate_filtered(ric, sys, paths, threads=threads)
    dW = _as_increments(paths)
    N, dt, t = ric.grid.N, ric.grid.dt, ric.grid.nodes
    r = np.empty((dW.shape[0], N, sys.n))
    for k in range(N):
        b = sys.blocks(t[k])
        xk, Yk, Zk = traj.x[:, k], traj.Y[:, k], traj.Z[:, k]
        drift = _apply(b["FYx"], xk) + _apply(b["FYY"], Yk) + _apply(b["FYZ"], Zk) + b["fY"]
        r[:, k] = traj.Y[:, k + 1] - Yk - drift * dt - Zk * dW[:, k, None]
    D = np.cumsum(r, axis=1)
    return ResidualStats(
        rms=float(np.sqrt(np.mean(D**2))),
        max=float(np.max(np.abs(D))),
        step_rms=float(np.sqrt(np.mean(r**2))),
        step_max=float(np.max(np.abs(r))),
    )
