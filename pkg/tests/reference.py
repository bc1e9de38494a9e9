"""Brute-force reference for the tree recursions.

Processes are full scenario tables of shape ``(2^N, 2^N)`` indexed by the
W-path and B-path integers (first step most significant), and every
conditional expectation is taken literally by averaging over the
coordinates outside the conditioning sigma-algebra.  Nothing here shares
code with the production oracle.
"""

import numpy as np


def bit(idx, k, N):
    return (idx >> (N - 1 - k)) & 1


def cond_exp(X, keep_w, keep_b_from, N):
    """E[X | dW_0..dW_{keep_w-1}, dB_{keep_b_from}..dB_{N-1}]."""
    n = 2**N
    out = np.empty_like(X)
    w_groups = np.arange(n) >> (N - keep_w)
    b_groups = np.arange(n) & ((1 << (N - keep_b_from)) - 1)
    for gw in np.unique(w_groups):
        rows = w_groups == gw
        for gb in np.unique(b_groups):
            cols = b_groups == gb
            out[np.ix_(rows, cols)] = X[np.ix_(rows, cols)].mean()
    return out


def increments(N, dt):
    idx = np.arange(2**N)
    sq = np.sqrt(dt)
    dW = [np.broadcast_to(((2 * bit(idx, k, N) - 1) * sq)[:, None], (2**N, 2**N)) for k in range(N)]
    dB = [np.broadcast_to(((2 * bit(idx, k, N) - 1) * sq)[None, :], (2**N, 2**N)) for k in range(N)]
    return dW, dB


def expand(level, k, N):
    """Full-table view of a production level-k array."""
    level = np.broadcast_to(np.asarray(level, dtype=float).reshape(2**k, -1), (2**k, 2 ** (N - k)))
    iw = np.arange(2**N)[:, None] >> (N - k)
    ib = np.arange(2**N)[None, :] & ((1 << (N - k)) - 1)
    return level[iw, ib]


def solve(spec, u1_levels, u2_levels, N):
    """Return full tables (Y, Z, y, z) and the scenario weight."""
    T = spec.horizon
    dt = T / N
    t = np.arange(N + 1) * dt
    dW, dB = increments(N, dt)
    W_T = sum(dW)
    u1 = [expand(u, k, N) for k, u in enumerate(u1_levels)]
    u2 = [expand(u, k, N) for k, u in enumerate(u2_levels)]
    Y = [None] * (N + 1)
    Z = [None] * N
    Y[N] = spec.terminal.kappa0 + spec.terminal.kappa1 * W_T
    for k in range(N - 1, -1, -1):
        EY = cond_exp(Y[k + 1], k, k, N)
        Z[k] = cond_exp(Y[k + 1] * dW[k], k, k, N) / dt
        s = t[k]
        Y[k] = (EY + dt * (spec.a0(s) + spec.a1(s) * EY + spec.a2(s) * Z[k]
                           + spec.a3(s) * u1[k] + spec.a4(s) * u2[k])
                + spec.b0(t[k + 1]) * dB[k])
    y = [None] * (N + 1)
    z = [None] * N
    y[0] = spec.M * Y[0]
    for k in range(N):
        s = t[k]
        S = (y[k] + dt * (spec.c0(s) + spec.c1(s) * y[k] + spec.c2(s) * Y[k] + spec.c3(s) * Z[k])
             + spec.d0(s) * dW[k])
        y[k + 1] = cond_exp(S, k + 1, k + 1, N)
        z[k] = cond_exp(S * dB[k], k + 1, k + 1, N) / dt
    return Y, Z, y, z, u1, u2


def cost(c, Y, Z, y, z, u1, u2, T, N):
    dt = T / N
    total = 0.0
    for k in range(N):
        s = k * dt
        total += dt * np.mean(c.y(s) * y[k] ** 2 + c.z(s) * z[k] ** 2 + c.Y(s) * Y[k] ** 2
                              + c.Z(s) * Z[k] ** 2 + c.v1(s) * u1[k] ** 2 + c.v2(s) * u2[k] ** 2)
    total += c.yT * np.mean(y[N] ** 2) + c.Y0 * np.mean(Y[0] ** 2)
    return -0.5 * total
