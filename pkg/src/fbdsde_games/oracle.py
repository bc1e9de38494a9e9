"""Exact evaluation of the discretized game on the binary two-noise tree.

Storage layout
--------------
A process at level ``k`` is an array of shape ``(2^k, 2^(N-k))``.  Row ``i``
is the W-prefix ``(dW_0, ..., dW_{k-1})`` with the first step as the most
significant bit (bit 1 means ``+sqrt(dt)``), so the children of row ``i`` are
rows ``2i`` (down) and ``2i + 1`` (up).  Column ``j`` is the B-suffix
``(dB_k, ..., dB_{N-1})`` with ``dB_k`` as the most significant bit.  These
are exactly the coordinates a level-``k`` quantity may depend on, so
adaptedness holds by construction and every entry carries the same
probability mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument
from .filtering import FeedbackPolicy, LinearFbsdeSystem, RiccatiSolution, simulate_filtered
from .model import QuadraticCost
from .noise import TreeNoise

__all__ = [
    "PolicyOnTree",
    "TreeSolution",
    "policy_on_tree",
    "solve_backward_on_tree",
    "solve_forward_on_tree",
    "solve_on_tree",
    "eval_cost_on_tree",
    "cost_on_tree",
    "filter_on_tree",
    "node_dump",
]


@dataclass(frozen=True, eq=False)
class PolicyOnTree:
    """Controls per level: ``u1[k]``, ``u2[k]`` of shape ``(2^k,)`` (W-adapted)
    or ``(2^k, 2^(N-k))`` (full information)."""

    tree: TreeNoise
    u1: tuple
    u2: tuple

    def __post_init__(self):
        N = self.tree.depth
        if len(self.u1) != N or len(self.u2) != N:
            raise InvalidArgument(f"policy needs controls on {N} levels")
        for seq in (self.u1, self.u2):
            for k, u in enumerate(seq):
                if u.shape[0] != 2**k or u.ndim > 2 or (u.ndim == 2 and u.shape[1] != 2 ** (N - k)):
                    raise InvalidArgument(f"control at level {k} has shape {u.shape}")

    @property
    def w_adapted(self) -> bool:
        return all(u.ndim == 1 for u in self.u1 + self.u2)

    def level(self, k: int):
        """Controls at level ``k`` in a shape broadcastable to level storage."""
        return tuple(u[:, None] if u.ndim == 1 else u for u in (self.u1[k], self.u2[k]))

    @classmethod
    def zero(cls, tree: TreeNoise) -> "PolicyOnTree":
        levels = tuple(np.zeros(2**k) for k in range(tree.depth))
        return cls(tree, levels, levels)

    @classmethod
    def from_functions(cls, tree: TreeNoise, fn1: Callable, fn2: Callable) -> "PolicyOnTree":
        """Open-loop controls ``u_i = fn_i(t_k, W(t_k))`` evaluated on every W-prefix."""
        t = tree.grid.nodes
        u1, u2 = [], []
        for k in range(tree.depth):
            w = tree.w_values(k)
            u1.append(np.broadcast_to(np.asarray(fn1(t[k], w), dtype=float), w.shape).copy())
            u2.append(np.broadcast_to(np.asarray(fn2(t[k], w), dtype=float), w.shape).copy())
        return cls(tree, tuple(u1), tuple(u2))

    def perturbed(self, player: int, eps: float, beta: Sequence[np.ndarray]) -> "PolicyOnTree":
        """Policy with ``u_player + eps * beta``; ``beta[k]`` has level-``k`` shape."""
        own = self.u1 if player == 1 else self.u2
        moved = tuple(_shift(u, eps, np.asarray(b, dtype=float)) for u, b in zip(own, beta))
        if player == 1:
            return PolicyOnTree(self.tree, moved, self.u2)
        return PolicyOnTree(self.tree, self.u1, moved)

    def swapped(self) -> "PolicyOnTree":
        return PolicyOnTree(self.tree, self.u2, self.u1)


def _shift(u, eps, b):
    if u.ndim == 2 and b.ndim == 1:
        b = b[:, None]
    elif u.ndim == 1 and b.ndim == 2:
        u = u[:, None]
    return u + eps * b


def policy_on_tree(policy: FeedbackPolicy, ric: RiccatiSolution, sys: LinearFbsdeSystem,
                   tree: TreeNoise) -> PolicyOnTree:
    """Run the filtered dynamics along every W-path of the tree and apply ``policy``."""
    if policy.grid != tree.grid or ric.grid != tree.grid:
        raise InvalidArgument("policy, Riccati solution and tree must share a grid")
    N = tree.depth
    traj = simulate_filtered(ric, sys, tree.w_paths)
    u1, u2 = [], []
    for k in range(N):
        stride = 2 ** (N - k)
        p1 = traj.x[::stride, k, 1]
        p2 = traj.x[::stride, k, 2]
        a, b = policy.controls(k, p1, p2)
        u1.append(np.asarray(a, dtype=float))
        u2.append(np.asarray(b, dtype=float))
    return PolicyOnTree(tree, tuple(u1), tuple(u2))


@dataclass(frozen=True, eq=False)
class TreeSolution:
    """Level arrays ``Y[0..N]``, ``y[0..N]``, ``Z[0..N-1]``, ``z[0..N-1]``."""

    tree: TreeNoise
    policy: PolicyOnTree
    Y: list
    Z: list
    y: list
    z: list


def _signs(dt: float, S: int) -> np.ndarray:
    sq = np.sqrt(dt)
    return np.repeat(np.array([-sq, sq]), S)


def solve_backward_on_tree(spec, pol: PolicyOnTree, tree: TreeNoise):
    """Explicit backward recursion; returns level lists ``(Y, Z)``."""
    g = tree.grid
    N, dt, t = g.N, g.dt, g.nodes
    sq = np.sqrt(dt)
    Y = [None] * (N + 1)
    Z = [None] * N
    Y[N] = spec.terminal(tree.w_values(N))[:, None]
    for k in range(N - 1, -1, -1):
        S = 2 ** (N - k - 1)
        nxt = Y[k + 1].reshape(2**k, 2, S)
        EY = 0.5 * (nxt[:, 1] + nxt[:, 0])
        Zk = (nxt[:, 1] - nxt[:, 0]) / (2.0 * sq)
        tk = t[k]
        base = EY + dt * (spec.a0(tk) + spec.a1(tk) * EY + spec.a2(tk) * Zk)
        u1, u2 = pol.level(k)
        Y[k] = (np.tile(base, (1, 2)) + dt * (spec.a3(tk) * u1 + spec.a4(tk) * u2)
                + spec.b0(t[k + 1]) * _signs(dt, S))
        Z[k] = np.tile(Zk, (1, 2))
    return Y, Z


def solve_forward_on_tree(spec, Y, Z, tree: TreeNoise):
    """Forward recursion from ``y_0 = M Y_0``, averaging out ``dB_k`` at each step."""
    g = tree.grid
    N, dt, t = g.N, g.dt, g.nodes
    sq = np.sqrt(dt)
    y = [None] * (N + 1)
    z = [None] * N
    y[0] = spec.M * Y[0]
    for k in range(N):
        S = 2 ** (N - k - 1)
        tk = t[k]
        R = y[k] + dt * (spec.c0(tk) + spec.c1(tk) * y[k] + spec.c2(tk) * Y[k] + spec.c3(tk) * Z[k])
        R = R.reshape(2**k, 2, S)
        z[k] = np.tile((R[:, 1] - R[:, 0]) / (2.0 * sq), (1, 2))
        avg = 0.5 * (R[:, 1] + R[:, 0])
        step = spec.d0(tk) * np.array([-sq, sq])
        y[k + 1] = (avg[:, None, :] + step[None, :, None]).reshape(2 ** (k + 1), S)
    return y, z


def solve_on_tree(spec, pol: PolicyOnTree, tree: TreeNoise) -> TreeSolution:
    if pol.tree.grid != tree.grid:
        raise InvalidArgument("policy was built for a different tree")
    if getattr(spec, "info", "w-filtration") == "w-filtration" and not pol.w_adapted:
        raise InvalidArgument("policy depends on B but the game uses W-generated information")
    Y, Z = solve_backward_on_tree(spec, pol, tree)
    y, z = solve_forward_on_tree(spec, Y, Z, tree)
    return TreeSolution(tree, pol, Y, Z, y, z)


def cost_on_tree(sol: TreeSolution, cost: QuadraticCost) -> float:
    """Exact value of a quadratic functional with left-endpoint time quadrature."""
    g = sol.tree.grid
    N, dt, t = g.N, g.dt, g.nodes
    total = 0.0
    for k in range(N):
        tk = t[k]
        u1, u2 = sol.policy.level(k)
        shape = sol.Y[k].shape
        integrand = (cost.y(tk) * sol.y[k] ** 2 + cost.z(tk) * sol.z[k] ** 2
                     + cost.Y(tk) * sol.Y[k] ** 2 + cost.Z(tk) * sol.Z[k] ** 2
                     + cost.v1(tk) * np.broadcast_to(u1, shape) ** 2
                     + cost.v2(tk) * np.broadcast_to(u2, shape) ** 2)
        total += dt * float(np.mean(integrand))
    total += cost.yT * float(np.mean(sol.y[N] ** 2)) + cost.Y0 * float(np.mean(sol.Y[0] ** 2))
    return -0.5 * total


def eval_cost_on_tree(spec, i: int, sol: TreeSolution, cost: QuadraticCost | None = None) -> float:
    """``J_i`` of the solution (or of an explicit signed ``cost`` view)."""
    return cost_on_tree(sol, spec.cost(i) if cost is None else cost)


def filter_on_tree(proc: np.ndarray) -> np.ndarray:
    """Conditional expectation of a level array given the W-prefix."""
    return np.asarray(proc).mean(axis=1)


def node_dump(sol: TreeSolution):
    """Rows ``(k, w_index, b_index, Y, Z, y, z)``; ``Z`` and ``z`` are empty at ``k = N``."""
    N = sol.tree.depth
    for k in range(N + 1):
        Yk = np.broadcast_to(sol.Y[k], (2**k, 2 ** (N - k)))
        for i in range(2**k):
            for j in range(2 ** (N - k)):
                if k < N:
                    yield k, i, j, Yk[i, j], sol.Z[k][i, j], sol.y[k][i, j], sol.z[k][i, j]
                else:
                    yield k, i, j, Yk[i, j], "", sol.y[k][i, j], ""
