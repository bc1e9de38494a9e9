"""Game specifications for the linear-quadratic FBDSDE game.

The controlled system is the scalar initial-coupled FBDSDE

    -dY = [a0 + a1 Y + a2 Z + a3 v1 + a4 v2] dt + b0 d^B - Z dW,   Y(T) = xi
     dy = [c0 + c1 y + c2 Y + c3 Z] dt + d0 dW - z d^B,              y(0) = M Y(0)

with ``xi = kappa0 + kappa1 W(T)``.  Player ``i`` maximizes

    J_i = -1/2 E[ int (e_i1 y^2 + e_i2 z^2 + e_i3 Y^2 + e_i4 Z^2 + e_i7 v_i^2) dt
                  + e_i5 y(T)^2 + e_i6 Y(0)^2 ].

Every cost functional in the package is carried as a :class:`QuadraticCost`,
which uses the same ``-1/2`` bracket convention but allows signed weights on
both controls; zero-sum views are built from it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "CoefficientFn",
    "TerminalCondition",
    "QuadraticCost",
    "LqGameSpec",
    "ZeroSumSpec",
    "GeneralCoefficients",
    "ValidationReport",
    "DYNAMIC_FIELDS",
    "FORWARD_FIELDS",
    "as_coefficient",
    "validate_spec",
    "reduce_spec",
    "has_shape",
    "to_zero_sum",
    "lq_coefficients",
]

COEFFICIENT_KINDS = ("constant", "piecewise-constant", "polynomial")
INFO_KINDS = ("w-filtration", "full")

DYNAMIC_FIELDS = ("a0", "a1", "a2", "a3", "a4", "b0", "c0", "c1", "c2", "c3", "d0")
FORWARD_FIELDS = ("c0", "c1", "c2", "c3", "d0")


@dataclass(frozen=True)
class CoefficientFn:
    """Deterministic, bounded coefficient of time.

    ``data`` holds ``(value,)`` for a constant, ``((t0, v0), (t1, v1), ...)``
    for a right-continuous step function whose value is ``v_j`` on
    ``[t_j, t_{j+1})`` (the first value extends to the left), and ascending
    power coefficients for a polynomial.
    """

    kind: str
    data: tuple

    def __post_init__(self):
        if self.kind not in COEFFICIENT_KINDS:
            raise InvalidArgument(f"unknown coefficient kind {self.kind!r}")
        if self.kind == "constant":
            data = tuple(float(v) for v in np.atleast_1d(self.data))
            if len(data) != 1:
                raise InvalidArgument("constant coefficient takes exactly one value")
        elif self.kind == "polynomial":
            data = tuple(float(v) for v in self.data)
            if not data:
                raise InvalidArgument("polynomial coefficient needs at least one term")
        else:
            data = tuple((float(b), float(v)) for b, v in self.data)
            if not data:
                raise InvalidArgument("piecewise-constant coefficient needs a breakpoint")
            breaks = [b for b, _ in data]
            if any(b1 <= b0 for b0, b1 in zip(breaks, breaks[1:])):
                raise InvalidArgument("piecewise-constant breakpoints must increase")
        object.__setattr__(self, "data", data)

    @classmethod
    def constant(cls, value: float) -> "CoefficientFn":
        return cls("constant", (value,))

    @classmethod
    def piecewise(cls, pieces: Iterable[tuple[float, float]]) -> "CoefficientFn":
        return cls("piecewise-constant", tuple(pieces))

    @classmethod
    def polynomial(cls, coefficients: Sequence[float]) -> "CoefficientFn":
        return cls("polynomial", tuple(coefficients))

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full(t_arr.shape, self.data[0])
        elif self.kind == "polynomial":
            out = np.polynomial.polynomial.polyval(t_arr, self.data)
            out = np.asarray(out, dtype=float)
        else:
            breaks = np.array([b for b, _ in self.data])
            values = np.array([v for _, v in self.data])
            idx = np.clip(np.searchsorted(breaks, t_arr, side="right") - 1, 0, len(values) - 1)
            out = values[idx]
        return float(out) if np.ndim(out) == 0 else out

    def __neg__(self) -> "CoefficientFn":
        if self.kind == "piecewise-constant":
            return CoefficientFn(self.kind, tuple((b, -v) for b, v in self.data))
        return CoefficientFn(self.kind, tuple(-v for v in self.data))

    @property
    def is_zero(self) -> bool:
        if self.kind == "piecewise-constant":
            return all(v == 0.0 for _, v in self.data)
        return all(v == 0.0 for v in self.data)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def integral(self, t0: float, t1: float) -> float:
        """Exact integral over ``[t0, t1]``."""
        if self.kind == "constant":
            return self.data[0] * (t1 - t0)
        if self.kind == "polynomial":
            antider = np.polynomial.polynomial.polyint(self.data)
            return float(
                np.polynomial.polynomial.polyval(t1, antider)
                - np.polynomial.polynomial.polyval(t0, antider)
            )
        sign = 1.0
        if t1 < t0:
            t0, t1, sign = t1, t0, -1.0
        cuts = [t0] + [b for b, _ in self.data if t0 < b < t1] + [t1]
        return sign * sum(self(a) * (b - a) for a, b in zip(cuts, cuts[1:]))

    def extrema(self, T: float) -> tuple[float, float]:
        """Exact (min, max) of the coefficient over ``[0, T]``."""
        if self.kind == "constant":
            return self.data[0], self.data[0]
        if self.kind == "piecewise-constant":
            vals = [self(0.0)] + [v for b, v in self.data if 0.0 < b <= T]
            return min(vals), max(vals)
        points = [0.0, T]
        if len(self.data) > 2:
            deriv = np.polynomial.polynomial.polyder(self.data)
            for root in np.polynomial.polynomial.polyroots(deriv):
                if abs(root.imag) < 1e-12 and 0.0 < root.real < T:
                    points.append(root.real)
        vals = np.asarray(self(np.array(points)))
        return float(vals.min()), float(vals.max())

    def is_finite(self) -> bool:
        flat = [v for pair in self.data for v in (pair if isinstance(pair, tuple) else (pair,))]
        return all(math.isfinite(v) for v in flat)


ZERO = CoefficientFn.constant(0.0)
ONE = CoefficientFn.constant(1.0)


def as_coefficient(value) -> CoefficientFn:
    """Coerce a number, ``{kind, data}`` mapping or CoefficientFn."""
    if isinstance(value, CoefficientFn):
        return value
    if isinstance(value, dict):
        try:
            return CoefficientFn(value["kind"], value["data"])
        except KeyError as exc:
            raise InvalidArgument(f"coefficient mapping is missing {exc.args[0]!r}") from None
    if isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
        return CoefficientFn.constant(float(value))
    raise InvalidArgument(f"cannot interpret {value!r} as a coefficient")


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal value ``xi = kappa0 + kappa1 W(T)`` of the backward equation."""

    kappa0: float = 0.0
    kappa1: float = 0.0

    def __call__(self, w_terminal):
        return self.kappa0 + self.kappa1 * np.asarray(w_terminal, dtype=float)


@dataclass(frozen=True)
class QuadraticCost:
    """Signed quadratic functional ``-1/2 E[int(...) dt + yT y(T)^2 + Y0 Y(0)^2]``."""

    y: CoefficientFn = ZERO
    z: CoefficientFn = ZERO
    Y: CoefficientFn = ZERO
    Z: CoefficientFn = ZERO
    v1: CoefficientFn = ZERO
    v2: CoefficientFn = ZERO
    yT: float = 0.0
    Y0: float = 0.0

    def __neg__(self) -> "QuadraticCost":
        return QuadraticCost(-self.y, -self.z, -self.Y, -self.Z, -self.v1, -self.v2,
                             -self.yT, -self.Y0)

    def running(self, t, y, z, Y, Z, v1, v2):
        """Integrand of ``J`` (already carrying the ``-1/2`` factor)."""
        return -0.5 * (self.y(t) * y**2 + self.z(t) * z**2 + self.Y(t) * Y**2
                       + self.Z(t) * Z**2 + self.v1(t) * v1**2 + self.v2(t) * v2**2)


class _CoefficientFields:
    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.type in ("CoefficientFn",) or f.name in DYNAMIC_FIELDS:
                object.__setattr__(self, f.name, as_coefficient(value))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "M", float(self.M))
        if not isinstance(self.terminal, TerminalCondition):
            object.__setattr__(self, "terminal", TerminalCondition(*self.terminal))

    def coefficient(self, name: str) -> CoefficientFn:
        return getattr(self, name)

    def dynamics(self) -> dict[str, CoefficientFn]:
        return {name: getattr(self, name) for name in DYNAMIC_FIELDS}


@dataclass(frozen=True)
class LqGameSpec(_CoefficientFields):
    """Nonzero-sum LQ game.  ``e[i-1][k-1]`` is the weight ``e_ik``."""

    horizon: float = 1.0
    a0: CoefficientFn = ZERO
    a1: CoefficientFn = ZERO
    a2: CoefficientFn = ZERO
    a3: CoefficientFn = ZERO
    a4: CoefficientFn = ZERO
    b0: CoefficientFn = ZERO
    c0: CoefficientFn = ZERO
    c1: CoefficientFn = ZERO
    c2: CoefficientFn = ZERO
    c3: CoefficientFn = ZERO
    d0: CoefficientFn = ZERO
    e: tuple = ((ZERO,) * 6 + (ONE,), (ZERO,) * 6 + (ONE,))
    M: float = 1.0
    terminal: TerminalCondition = TerminalCondition()
    info: str = "w-filtration"

    def __post_init__(self):
        super().__post_init__()
        if len(self.e) != 2 or any(len(row) != 7 for row in self.e):
            raise InvalidArgument("cost weights must be a 2 x 7 table")
        e = tuple(tuple(as_coefficient(w) for w in row) for row in self.e)
        object.__setattr__(self, "e", e)

    def weight(self, i: int, k: int) -> CoefficientFn:
        return self.e[i - 1][k - 1]

    def cost(self, i: int) -> QuadraticCost:
        w = self.e[i - 1]
        own = {"v1": w[6], "v2": ZERO} if i == 1 else {"v1": ZERO, "v2": w[6]}
        return QuadraticCost(y=w[0], z=w[1], Y=w[2], Z=w[3], yT=w[4](self.horizon),
                             Y0=w[5](0.0), **own)

    def control_gain(self, i: int, t):
        """Feedback gain ``-a_{2+i} / e_i7`` applied to the filtered ``p_i``."""
        channel = self.a3 if i == 1 else self.a4
        return -channel(t) / self.weight(i, 7)(t)

    def with_weights(self, **weights) -> "LqGameSpec":
        """Copy with selected ``eik`` weights replaced, e.g. ``e17=2.0``."""
        e = [list(row) for row in self.e]
        for name, value in weights.items():
            i, k = int(name[1]), int(name[2])
            e[i - 1][k - 1] = as_coefficient(value)
        return dataclasses.replace(self, e=tuple(tuple(r) for r in e))


@dataclass(frozen=True)
class ZeroSumSpec(_CoefficientFields):
    """Zero-sum LQ game; player 1 minimizes and player 2 maximizes

        J = 1/2 E[ int (l1 y^2 + l2 z^2 + l3 Y^2 + l4 Z^2 + r1 v1^2 - r2 v2^2) dt
                   + l5 y(T)^2 + l6 Y(0)^2 ].
    """

    horizon: float = 1.0
    a0: CoefficientFn = ZERO
    a1: CoefficientFn = ZERO
    a2: CoefficientFn = ZERO
    a3: CoefficientFn = ZERO
    a4: CoefficientFn = ZERO
    b0: CoefficientFn = ZERO
    c0: CoefficientFn = ZERO
    c1: CoefficientFn = ZERO
    c2: CoefficientFn = ZERO
    c3: CoefficientFn = ZERO
    d0: CoefficientFn = ZERO
    l1: CoefficientFn = ZERO
    l2: CoefficientFn = ZERO
    l3: CoefficientFn = ZERO
    l4: CoefficientFn = ZERO
    r1: CoefficientFn = ONE
    r2: CoefficientFn = ONE
    l5: float = 0.0
    l6: float = 0.0
    M: float = 1.0
    terminal: TerminalCondition = TerminalCondition()
    info: str = "w-filtration"

    def __post_init__(self):
        super().__post_init__()
        for name in ("l1", "l2", "l3", "l4", "r1", "r2"):
            object.__setattr__(self, name, as_coefficient(getattr(self, name)))
        object.__setattr__(self, "l5", float(self.l5))
        object.__setattr__(self, "l6", float(self.l6))

    def cost(self) -> QuadraticCost:
        """``J`` itself in the ``-1/2`` bracket convention."""
        return QuadraticCost(y=-self.l1, z=-self.l2, Y=-self.l3, Z=-self.l4,
                             v1=-self.r1, v2=self.r2, yT=-self.l5, Y0=-self.l6)

    def equivalent_game(self) -> LqGameSpec:
        """Nonzero-sum game with ``J1 = -J`` and ``J2 = J``.

        Weights on the opponent's control do not enter a player's adjoint or
        stationarity condition, so the returned spec reproduces both players'
        first-order conditions.  Player 2's state weights are nonpositive;
        the spec is therefore not expected to pass :func:`validate_spec`.
        """
        ls = (self.l1, self.l2, self.l3, self.l4)
        e1 = ls + (as_coefficient(self.l5), as_coefficient(self.l6), self.r1)
        e2 = tuple(-w for w in ls) + (as_coefficient(-self.l5), as_coefficient(-self.l6), self.r2)
        return LqGameSpec(horizon=self.horizon, e=(e1, e2), M=self.M,
                          terminal=self.terminal, info=self.info, **self.dynamics())


def to_zero_sum(spec: ZeroSumSpec) -> tuple[QuadraticCost, QuadraticCost]:
    """Signed cost views ``(J1, J2) = (-J, J)`` of a zero-sum game."""
    j = spec.cost()
    return -j, j


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __iter__(self):
        return iter(self.violations)

    def __contains__(self, text: str) -> bool:
        return any(text in v for v in self.violations)


def _check_weight(out, label, w: CoefficientFn, T, strict=False, constant=False):
    if not w.is_finite():
        out.append(f"{label} not finite")
        return
    lo, _ = w.extrema(T)
    if strict and lo <= 0.0:
        out.append(f"{label} not positive")
    elif not strict and lo < 0.0:
        out.append(f"{label} negative")
    if constant and not w.is_constant:
        out.append(f"{label} not constant")


def validate_spec(spec) -> ValidationReport:
    """List every violated standing assumption of ``spec``.

    Works for :class:`LqGameSpec` and :class:`ZeroSumSpec`.
    """
    out: list[str] = []
    T = spec.horizon
    if not (math.isfinite(T) and T > 0):
        out.append("horizon not positive")
        T = 1.0
    for name in DYNAMIC_FIELDS:
        if not spec.coefficient(name).is_finite():
            out.append(f"{name} not finite")
    if isinstance(spec, ZeroSumSpec):
        for name in ("l1", "l2", "l3", "l4", "r1", "r2"):
            _check_weight(out, name, getattr(spec, name), T, strict=name[0] == "r")
        for name in ("l5", "l6"):
            _check_weight(out, name, as_coefficient(getattr(spec, name)), T)
        _check_common(out, spec)
        return ValidationReport(out)
    for i in (1, 2):
        for k in range(1, 8):
            _check_weight(out, f"e{i}{k}", spec.weight(i, k), T, strict=k == 7, constant=k in (5, 6))
    _check_common(out, spec)
    return ValidationReport(out)


def _check_common(out, spec):
    if spec.M == 0.0:
        out.append("M is zero")
    elif not math.isfinite(spec.M):
        out.append("M not finite")
    if not (math.isfinite(spec.terminal.kappa0) and math.isfinite(spec.terminal.kappa1)):
        out.append("terminal not finite")
    if spec.info not in INFO_KINDS:
        out.append(f"info {spec.info!r} unknown")


_REDUCTIONS = {
    "bsde": ("b0",) + FORWARD_FIELDS,
    "bdsde": FORWARD_FIELDS,
    "fbsde": ("b0",),
}


def reduce_spec(spec, target: str):
    """Force the coefficients absent from ``target`` to zero."""
    try:
        names = _REDUCTIONS[target]
    except KeyError:
        raise InvalidArgument(f"unknown reduction target {target!r}") from None
    return dataclasses.replace(spec, **{name: ZERO for name in names})


def has_shape(spec, target: str) -> bool:
    return all(spec.coefficient(name).is_zero for name in _REDUCTIONS[target])


@dataclass(frozen=True)
class GeneralCoefficients:
    """Pointwise callables of ``(t, y, z, Y, Z, v1, v2)`` for Hamiltonian evaluation.

    ``running_costs`` are the integrands ``l_1, l_2`` of the nonzero-sum
    criteria; ``running_cost`` is ``l`` of a zero-sum criterion.
    """

    f: Callable
    fbar: Callable
    g: Callable
    gbar: Callable
    phi: Callable = lambda Y: Y
    running_costs: tuple = ()
    running_cost: Callable | None = None
    initial_costs: tuple = ()
    terminal_costs: tuple = ()


def lq_coefficients(spec: LqGameSpec) -> GeneralCoefficients:
    """Express an LQ spec through the general coefficient callables."""
    s = spec

    def f(t, y, z, Y, Z, v1, v2):
        return s.c0(t) + s.c1(t) * y + s.c2(t) * Y + s.c3(t) * Z

    def fbar(t, y, z, Y, Z, v1, v2):
        return s.d0(t)

    def g(t, y, z, Y, Z, v1, v2):
        return s.a0(t) + s.a1(t) * Y + s.a2(t) * Z + s.a3(t) * v1 + s.a4(t) * v2

    def gbar(t, y, z, Y, Z, v1, v2):
        return s.b0(t)

    def running(i):
        c = s.cost(i)
        return lambda t, y, z, Y, Z, v1, v2: c.running(t, y, z, Y, Z, v1, v2)

    return GeneralCoefficients(
        f=f, fbar=fbar, g=g, gbar=gbar,
        phi=lambda Y: s.M * Y,
        running_costs=(running(1), running(2)),
        initial_costs=tuple((lambda Y, w=s.weight(i, 6)(0.0): -0.5 * w * Y**2) for i in (1, 2)),
        terminal_costs=tuple((lambda y, w=s.weight(i, 5)(s.horizon): -0.5 * w * y**2)
                             for i in (1, 2)),
    )
