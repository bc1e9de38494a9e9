"""Acceptance criteria, one test each.  Every test logs a single PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from fbdsde_games.cli import main
from fbdsde_games.filtering import LinearFbsdeSystem, assemble_filtering_system, decoupling_residual, simulate_filtered, solve_decoupling
from fbdsde_games.hamiltonian import stationarity_residual
from fbdsde_games.model import to_zero_sum
from fbdsde_games.noise import enumerate_tree, make_grid, sample_paths
from fbdsde_games.oracle import PolicyOnTree, cost_on_tree, eval_cost_on_tree, solve_on_tree
from fbdsde_games.verify import (
    EPS_GRID,
    VALUE_TOL,
    build_candidate,
    default_deviations,
    default_tolerance,
    filter_consistency_check,
    gateaux_check,
    minimax_gap_check,
    nash_check,
    observed_order,
    saddle_check,
)

pytestmark = pytest.mark.acceptance


def tree_of(N, T=1.0):
    return enumerate_tree(make_grid(T, N))


def verdict(ok):
    return "PASS" if ok else "FAIL"


def test_ac1_exponential_closed_form(exp_spec, acceptance_log):
    start = time.perf_counter()
    ric = solve_decoupling(assemble_filtering_system(exp_spec), make_grid(1.0, 64))
    riccati_err = abs(ric.h0[0, 0] - math.e)
    errs = {N: abs(solve_on_tree(exp_spec, PolicyOnTree.zero(tree_of(N)), tree_of(N)).Y[0][0, 0] - math.e)
            for N in (4, 8)}
    ratio = errs[4] / errs[8]
    elapsed = time.perf_counter() - start
    checks = {
        "riccati": riccati_err <= 1e-6,
        "tree N=8": errs[8] <= 0.15,
        "ratio": 1.5 <= ratio <= 2.5,
        "runtime": elapsed < 5.0,
    }
    ok = all(checks.values())
    acceptance_log(f"AC1 {verdict(ok)}: Y(0) riccati err {riccati_err:.2e} (<=1e-6); tree err N=4 {errs[4]:.6f}, "
                   f"N=8 {errs[8]:.6f} (<=0.15); ratio {ratio:.4f} in [1.5, 2.5]; {elapsed:.2f}s (<5s)")
    assert ok, {k: v for k, v in checks.items() if not v}


def test_ac2_scalar_riccati(acceptance_log):
    start = time.perf_counter()
    sys = LinearFbsdeSystem.constant(1, 1.0, GT=[[0.5]], FxY=1.0)
    P0 = solve_decoupling(sys, make_grid(1.0, 64)).P[0, 0, 0]
    elapsed = time.perf_counter() - start
    ok = abs(P0 - 1.0) <= 1e-8 and elapsed < 1.0
    acceptance_log(f"AC2 {verdict(ok)}: P(0) = {float(P0)!r}, err {abs(P0 - 1.0):.2e} (<=1e-8); {elapsed:.3f}s (<1s)")
    assert ok


def test_ac3_decoupling_residual_order(specA, acceptance_log):
    start = time.perf_counter()
    sys = assemble_filtering_system(specA)
    rms = {}
    for N in (32, 64, 128):
        grid = make_grid(1.0, N)
        rms[N] = decoupling_residual(solve_decoupling(sys, grid), sys, sample_paths(grid, 10_000, 2024)).rms
    orders = [observed_order(rms[32], rms[64], 32, 64), observed_order(rms[64], rms[128], 64, 128)]
    elapsed = time.perf_counter() - start
    ok = all(0.7 <= p <= 1.3 for p in orders) and elapsed < 30.0
    acceptance_log(f"AC3 {verdict(ok)}: residual rms {rms[32]:.3e}, {rms[64]:.3e}, {rms[128]:.3e}; "
                   f"orders {orders[0]:.3f}, {orders[1]:.3f} in [0.7, 1.3]; {elapsed:.2f}s (<30s)")
    assert ok


def test_ac4_filter_consistency(specA, acceptance_log):
    errs, bounds, times = {}, {}, {}
    for N in (4, 6, 8):
        start = time.perf_counter()
        tree = tree_of(N)
        errs[N] = filter_consistency_check(specA, tree).max_error
        bounds[N] = 10 * tree.grid.dt
        times[N] = time.perf_counter() - start
    within = all(errs[N] <= bounds[N] for N in errs)
    monotone = errs[4] > errs[6] > errs[8]
    ok = within and monotone and times[8] < 60.0
    acceptance_log(f"AC4 {verdict(ok)}: max error " + ", ".join(f"N={N} {errs[N]:.4f} (<={bounds[N]:.3f})"
                                                                for N in errs)
                   + f"; monotone {monotone}; {times[8]:.2f}s at N=8 (<60s)")
    assert ok


def test_ac5_nash_verification(specA, acceptance_log):
    start = time.perf_counter()
    tree = tree_of(8)
    cand = build_candidate(specA, tree)
    devs = default_deviations()
    report = nash_check(specA, cand, devs, tree, tol=VALUE_TOL)
    negative = nash_check(specA, cand.feedback.shifted(0.2), devs, tree, tol=VALUE_TOL)
    elapsed = time.perf_counter() - start
    ok = (len(devs) >= 20 and len(EPS_GRID) >= 10 and report.passed and not negative.passed
          and elapsed < 120.0)
    acceptance_log(f"AC5 {verdict(ok)}: {len(devs)} deviations x {len(EPS_GRID)} eps, worst margin "
                   f"{report.worst_margin:.5f} (>=-5e-3); shifted control fails {not negative.passed} "
                   f"(worst {negative.worst_margin:.4f}); {elapsed:.2f}s (<120s)")
    assert ok


def test_ac6_stationarity(specA, acceptance_log):
    tree = tree_of(8)
    cand = build_candidate(specA, tree)
    sys = assemble_filtering_system(specA)
    traj = simulate_filtered(cand.ric, sys, tree.w_paths)
    N, t = tree.depth, tree.grid.nodes
    algebraic = 0.0
    for k in range(N):
        stride = 2 ** (N - k)
        for i, u in ((1, cand.policy.u1[k]), (2, cand.policy.u2[k])):
            res = stationarity_residual(i, t[k], traj.x[::stride, k, i], u, specA)
            algebraic = max(algebraic, float(np.max(np.abs(res))))
    bound = default_tolerance(tree.grid)
    grads = [abs(gateaux_check(specA, cand, d.player, d, tree)) for d in default_deviations()]
    ok = algebraic <= 1e-12 and max(grads) <= bound
    acceptance_log(f"AC6 {verdict(ok)}: algebraic residual {algebraic:.1e} (<=1e-12); max |Gateaux| "
                   f"{max(grads):.4f} over {len(grads)} directions (<={bound:.3f})")
    assert ok


def test_ac7_zero_sum(specZ, acceptance_log):
    tree = tree_of(8)
    cand = build_candidate(specZ, tree)
    sol = solve_on_tree(specZ, cand.policy, tree)
    J1, J2 = (cost_on_tree(sol, c) for c in to_zero_sum(specZ))
    devs = default_deviations()
    saddle = saddle_check(specZ, cand, devs, tree, tol=VALUE_TOL)
    gap = minimax_gap_check(specZ, cand, devs, tree)
    ok = abs(J1 + J2) <= 1e-12 and saddle.passed and gap.within(VALUE_TOL)
    acceptance_log(f"AC7 {verdict(ok)}: J1+J2 = {J1 + J2:.1e} (<=1e-12); saddle worst margin "
                   f"{saddle.worst_margin:.5f} (>=-5e-3); gap {gap.gap:.2e} (<=5e-3) with "
                   f"{gap.sup_inf:.6f} <= J {gap.candidate_value:.6f} <= {gap.inf_sup:.6f}")
    assert ok


def test_ac8_exact_constant_cost(constant_spec, acceptance_log):
    worst = 0.0
    for N in range(1, 11):
        tree = tree_of(N)
        sol = solve_on_tree(constant_spec, PolicyOnTree.zero(tree), tree)
        for i in (1, 2):
            worst = max(worst, abs(eval_cost_on_tree(constant_spec, i, sol) + 2.0))
    ok = worst <= 1e-12
    acceptance_log(f"AC8 {verdict(ok)}: max |J_i + 2| over N = 1..10 is {worst:.1e} (<=1e-12)")
    assert ok


COMMANDS = [
    ["solve", "--spec", "specA"],
    ["simulate", "--spec", "specA", "--dump-noise", "--residual"],
    ["oracle", "--spec", "specA", "--depth", "6", "--node-dump"],
    ["verify-nash", "--spec", "specA"],
    ["verify-saddle", "--spec", "specZ"],
    ["gateaux", "--spec", "specA"],
    ["consistency", "--spec", "specA"],
    ["converge", "--spec", "specA"],
]


def test_ac9_reproducible_outputs(tmp_path, acceptance_log):
    mismatches, compared = [], 0
    for argv in COMMANDS:
        dirs = []
        for run, threads in enumerate(("1", "1", "8")):
            out = tmp_path / f"{argv[0]}-{run}"
            assert main([*argv, "--out", str(out), "--threads", threads]) == 0, argv
            dirs.append(out)
        for path in sorted(dirs[0].glob("*.csv")):
            compared += 1
            if any((d / path.name).read_bytes() != path.read_bytes() for d in dirs[1:]):
                mismatches.append(f"{argv[0]}/{path.name}")
    ok = not mismatches and compared > 0
    acceptance_log(f"AC9 {verdict(ok)}: {compared} CSV files from {len(COMMANDS)} commands byte-identical "
                   f"across two --threads 1 runs and one --threads 8 run"
                   + (f"; mismatches {mismatches}" if mismatches else ""))
    assert ok
