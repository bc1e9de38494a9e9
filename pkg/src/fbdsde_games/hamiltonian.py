"""Pointwise Hamiltonians, the adjoint block system and first-order conditions.

For the LQ game the Hamiltonian of player ``i`` is

    H_i = q f + qbar fbar - p g - pbar gbar + l_i

with ``f = c0 + c1 y + c2 Y + c3 Z``, ``fbar = d0``,
``g = a0 + a1 Y + a2 Z + a3 v1 + a4 v2``, ``gbar = b0`` and ``l_i`` the
running integrand of ``J_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .model import LqGameSpec, QuadraticCost, ZeroSumSpec, validate_spec

__all__ = [
    "GameState",
    "AdjointState",
    "ControlPair",
    "AdjointSystem",
    "ArrowReport",
    "eval_hamiltonian_nz",
    "eval_hamiltonian_zs",
    "hamiltonian_control_gradient",
    "assemble_adjoint_system",
    "stationarity_residual",
    "arrow_condition_check",
]


@dataclass(frozen=True)
class GameState:
    y: float = 0.0
    z: float = 0.0
    Y: float = 0.0
    Z: float = 0.0


@dataclass(frozen=True)
class AdjointState:
    p: float = 0.0
    pbar: float = 0.0
    q: float = 0.0
    qbar: float = 0.0

    def __neg__(self) -> "AdjointState":
        return AdjointState(-self.p, -self.pbar, -self.q, -self.qbar)


@dataclass(frozen=True)
class ControlPair:
    v1: float = 0.0
    v2: float = 0.0


def _pairing(t, s: GameState, c: ControlPair, a: AdjointState, spec) -> float:
    f = spec.c0(t) + spec.c1(t) * s.y + spec.c2(t) * s.Y + spec.c3(t) * s.Z
    g = (spec.a0(t) + spec.a1(t) * s.Y + spec.a2(t) * s.Z
         + spec.a3(t) * c.v1 + spec.a4(t) * c.v2)
    return a.q * f + a.qbar * spec.d0(t) - a.p * g - a.pbar * spec.b0(t)


def eval_hamiltonian_nz(i: int, t: float, s: GameState, c: ControlPair, a: AdjointState,
                        spec: LqGameSpec, cost: QuadraticCost | None = None) -> float:
    """Hamiltonian of player ``i``.

    ``cost`` overrides the player's own criterion, e.g. with a signed view
    from :func:`~fbdsde_games.model.to_zero_sum`.
    """
    if i not in (1, 2):
        raise ValueError(f"player index must be 1 or 2, got {i}")
    cost = spec.cost(i) if cost is None else cost
    return _pairing(t, s, c, a, spec) + cost.running(t, s.y, s.z, s.Y, s.Z, c.v1, c.v2)


def eval_hamiltonian_zs(t: float, s: GameState, c: ControlPair, a: AdjointState,
                        spec: ZeroSumSpec) -> float:
    """Zero-sum Hamiltonian; its running term is the integrand of ``J`` itself,
    ``l = 1/2 (l1 y^2 + l2 z^2 + l3 Y^2 + l4 Z^2 + r1 v1^2 - r2 v2^2)``."""
    return _pairing(t, s, c, a, spec) + spec.cost().running(t, s.y, s.z, s.Y, s.Z, c.v1, c.v2)


def hamiltonian_control_gradient(i: int, t: float, s: GameState, c: ControlPair,
                                 a: AdjointState, spec: LqGameSpec) -> float:
    """``dH_i / dv_i``."""
    if i == 1:
        return -spec.a3(t) * a.p - spec.weight(1, 7)(t) * c.v1
    return -spec.a4(t) * a.p - spec.weight(2, 7)(t) * c.v2


def stationarity_residual(i: int, t, p_filtered, control, spec: LqGameSpec):
    """Conditional control gradient ``-a_{2+i} p~_i - e_i7 u_i``; vectorized in ``t``."""
    if i not in (1, 2):
        raise ValueError(f"player index must be 1 or 2, got {i}")
    channel = spec.a3 if i == 1 else spec.a4
    return -channel(t) * p_filtered - spec.weight(i, 7)(t) * control


@dataclass(frozen=True)
class AdjointSystem:
    """State and adjoint equations of both players as one linear block system.

    Forward vector ``x = (y, p1, p2)``, backward vector ``X = (Y, q1, q2)``,
    W-martingale ``Z = (Z, qbar1, qbar2)`` and B-martingale
    ``z = (z, pbar1, pbar2)``, with each control replaced by its stationary
    value ``u_i = -a_{2+i} p_i / e_i7``:

        dx  = (Fxx x + FxY X + FxZ Z + fx) dt + (Gxx x + GxY X + GxZ Z + gx) dW + Hx z d^B
        -dX = (A1 X + A2 x + A3 Z + ahat) dt + (HY z + hY) d^B - Z dW
        X(T) = GT x(T) + xi e1,   x(0) = K X(0)

    Every block is a callable of ``t`` returning a numpy array.
    """

    n: int
    horizon: float
    A1: Callable
    A2: Callable
    A3: Callable
    ahat: Callable
    Fxx: Callable
    FxY: Callable
    FxZ: Callable
    fx: Callable
    Gxx: Callable
    GxY: Callable
    GxZ: Callable
    gx: Callable
    Hx: Callable
    HY: Callable
    hY: Callable
    GT: np.ndarray
    K: np.ndarray
    kappa0: float
    kappa1: float


def _diag(*vals):
    return np.diag(np.array(vals, dtype=float))


def assemble_adjoint_system(spec: LqGameSpec, check: bool = True) -> AdjointSystem:
    """Block description of the coupled state/adjoint system.

    With ``check=False`` the standing assumptions are not enforced, which is
    needed for the signed equivalent game of a zero-sum instance.
    """
    if check:
        report = validate_spec(spec)
        if not report.ok:
            raise ValidationError(report.violations)
    s = spec
    e = lambda i, k, t: s.weight(i, k)(t)  # noqa: E731
    e1 = np.array([1.0, 0.0, 0.0])
    E11 = np.outer(e1, e1)

    def A2(t):
        return np.array([
            [0.0, -s.a3(t) ** 2 / e(1, 7, t), -s.a4(t) ** 2 / e(2, 7, t)],
            [-e(1, 1, t), 0.0, 0.0],
            [-e(2, 1, t), 0.0, 0.0],
        ])

    def FxY(t):
        c2 = s.c2(t)
        return np.array([[c2, 0.0, 0.0], [e(1, 3, t), -c2, 0.0], [e(2, 3, t), 0.0, -c2]])

    def GxZ(t):
        return np.array([[0.0, 0.0, 0.0], [e(1, 4, t), 0.0, 0.0], [e(2, 4, t), 0.0, 0.0]])

    def HY(t):
        return np.array([[0.0, 0.0, 0.0], [-e(1, 2, t), 0.0, 0.0], [-e(2, 2, t), 0.0, 0.0]])

    T = s.horizon
    return AdjointSystem(
        n=3,
        horizon=T,
        A1=lambda t: _diag(s.a1(t), s.c1(t), s.c1(t)),
        A2=A2,
        A3=lambda t: E11 * s.a2(t),
        ahat=lambda t: e1 * s.a0(t),
        Fxx=lambda t: _diag(s.c1(t), s.a1(t), s.a1(t)),
        FxY=FxY,
        FxZ=lambda t: E11 * s.c3(t),
        fx=lambda t: e1 * s.c0(t),
        Gxx=lambda t: _diag(0.0, s.a2(t), s.a2(t)),
        GxY=lambda t: _diag(0.0, -s.c3(t), -s.c3(t)),
        GxZ=GxZ,
        gx=lambda t: e1 * s.d0(t),
        Hx=lambda t: -np.eye(3),
        HY=HY,
        hY=lambda t: e1 * s.b0(t),
        GT=np.array([[0.0, 0.0, 0.0], [-e(1, 5, T), 0.0, 0.0], [-e(2, 5, T), 0.0, 0.0]]),
        K=np.array([[s.M, 0.0, 0.0], [e(1, 6, 0.0), -s.M, 0.0], [e(2, 6, 0.0), 0.0, -s.M]]),
        kappa0=s.terminal.kappa0,
        kappa1=s.terminal.kappa1,
    )


@dataclass(frozen=True)
class ArrowReport:
    passed: bool
    violation: tuple | None = None  # (player, weight index, time)

    def __bool__(self) -> bool:
        return self.passed


def arrow_condition_check(spec: LqGameSpec, times=None) -> ArrowReport:
    """Concavity of the maximized Hamiltonians in ``(y, z, Y, Z)``.

    In the LQ case this is nonnegativity of ``e_i1..e_i4`` on ``times``
    (default: 65 uniform nodes on ``[0, T]``) and of ``e_i5``, ``e_i6``.
    """
    T = spec.horizon
    times = np.linspace(0.0, T, 65) if times is None else np.asarray(times, dtype=float)
    for i in (1, 2):
        for k in (1, 2, 3, 4):
            vals = np.atleast_1d(spec.weight(i, k)(times))
            bad = np.flatnonzero(vals < 0.0)
            if bad.size:
                return ArrowReport(False, (i, k, float(times[bad[0]])))
        if spec.weight(i, 5)(T) < 0.0:
            return ArrowReport(False, (i, 5, T))
        if spec.weight(i, 6)(0.0) < 0.0:
            return ArrowReport(False, (i, 6, 0.0))
    return ArrowReport(True)
