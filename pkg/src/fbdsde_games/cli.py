"""Command-line interface.

Exit status: 0 success or pass, 1 check failed, 2 usage or input error,
3 numerical breakdown.  Data goes to files under ``--out``; diagnostics go
to standard error.
"""

from __future__ import annotations

import argparse
import csv
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, load_config
from .errors import FbdsdeError, NumericalBreakdown
from .filtering import (
    FeedbackPolicy,
    assemble_filtering_system,
    decoupling_residual,
    simulate_filtered,
    solve_decoupling,
    synthesize_equilibrium,
)
from .hamiltonian import arrow_condition_check
from .model import ZeroSumSpec, to_zero_sum, validate_spec
from .noise import MAX_TREE_DEPTH, enumerate_tree, make_grid, sample_paths
from .oracle import cost_on_tree, node_dump, solve_on_tree
from .verify import (
    build_candidate,
    convergence_study,
    default_deviations,
    default_tolerance,
    filter_consistency_check,
    gateaux_check,
    minimax_gap_check,
    nash_check,
    saddle_check,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BREAKDOWN = 0, 1, 2, 3
POLICY_COLUMNS = ["k", "t", "gain1", "gain2", "offset1", "offset2"]
TRAJECTORY_COLUMNS = ["path", "k", "t", "W", "ytilde", "p1tilde", "p2tilde", "Ytilde", "q1tilde",
                      "q2tilde", "Ztilde", "qbar1tilde", "qbar2tilde", "u1", "u2"]
NODE_DUMP_DEPTH = 6


class UsageError(FbdsdeError):
    pass


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_policy(path: str, grid) -> FeedbackPolicy:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read policy file {path}: {exc.strerror}") from None
    if not rows or set(POLICY_COLUMNS) - set(rows[0]):
        raise UsageError(f"policy file must have columns {','.join(POLICY_COLUMNS)}")
    if len(rows) != grid.N + 1:
        raise UsageError(f"policy file has {len(rows)} rows, expected {grid.N + 1} for depth {grid.N}")
    rows.sort(key=lambda r: int(r["k"]))
    cols = {c: np.array([float(r[c]) for r in rows]) for c in POLICY_COLUMNS[2:]}
    return FeedbackPolicy(grid, **cols)


class Run:
    """State shared by one command invocation."""

    def __init__(self, args):
        self.args = args
        self.started = time.perf_counter()
        file_cfg, self.spec = load_config(args.spec)
        self.cfg = RunConfig(
            spec_path=args.spec,
            command=args.command,
            depth=file_cfg.depth if args.depth is None else args.depth,
            paths=file_cfg.paths if args.paths is None else args.paths,
            seed=file_cfg.seed if args.seed is None else args.seed,
            tol=file_cfg.tol if args.tol is None else args.tol,
            out=args.out,
            threads=args.threads,
        )
        if self.cfg.depth < 1 or self.cfg.paths < 1 or self.cfg.seed < 0 or self.cfg.threads < 1:
            raise UsageError("depth, paths and threads must be positive and seed nonnegative")
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.zero_sum = isinstance(self.spec, ZeroSumSpec)
        self.game = self.spec.equivalent_game() if self.zero_sum else self.spec

    @property
    def grid(self):
        return make_grid(self.spec.horizon, self.cfg.depth)

    def tree(self, depth=None):
        depth = self.cfg.depth if depth is None else depth
        if depth > MAX_TREE_DEPTH:
            raise UsageError(f"oracle commands need depth <= {MAX_TREE_DEPTH}")
        return enumerate_tree(make_grid(self.spec.horizon, depth))

    def require_valid(self):
        report = validate_spec(self.spec)
        if not report.ok:
            raise UsageError("invalid spec: " + "; ".join(report))

    def feedback(self, tree=None):
        grid = self.grid if tree is None else tree.grid
        if self.args.policy:
            return read_policy(self.args.policy, grid)
        return None

    def manifest(self, outputs):
        lines = {
            "command": self.cfg.command,
            "spec": self.cfg.spec_path,
            "config_hash": config_hash(self.spec, self.cfg, policy=self.args.policy or ""),
            "seed": self.cfg.seed,
            "depth": self.cfg.depth,
            "paths": self.cfg.paths,
            "tol": repr(self.cfg.tol),
            "threads": self.cfg.threads,
            "outputs": ",".join(outputs),
            "package_version": __version__,
            "python_version": platform.python_version(),
            "numpy_version": np.__version__,
            "wall_time_s": f"{time.perf_counter() - self.started:.6f}",
        }
        text = "".join(f"{k}: {v}\n" for k, v in lines.items())
        (self.out / f"{self.cfg.command}.manifest.txt").write_text(text)


def cmd_validate(run: Run) -> int:
    violations = validate_spec(run.spec).violations
    arrow = None if run.zero_sum else arrow_condition_check(run.spec)
    for v in violations:
        print(f"violation: {v}", file=sys.stderr)
    if arrow is not None and not arrow.passed:
        print(f"concavity check failed at (player, weight, t) = {arrow.violation}", file=sys.stderr)
    print("valid" if not violations else "invalid", file=sys.stderr)
    run.manifest([])
    return EXIT_OK if not violations else EXIT_FAIL


def _riccati(run: Run, grid):
    sys_ = assemble_filtering_system(run.game, check=not run.zero_sum)
    return sys_, solve_decoupling(sys_, grid)


def cmd_solve(run: Run) -> int:
    run.require_valid()
    sys_, ric = _riccati(run, run.grid)
    policy = synthesize_equilibrium(ric, run.game)
    n = sys_.n
    header = ["k", "t"] + [f"P{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    header += [f"h0_{i + 1}" for i in range(n)] + [f"h1_{i + 1}" for i in range(n)]
    t = run.grid.nodes
    rows = ([k, t[k], *ric.P[k].ravel(), *ric.h0[k], *ric.h1[k]] for k in range(run.grid.N + 1))
    write_csv(run.out / "riccati.csv", header, rows)
    write_csv(run.out / "policy.csv", POLICY_COLUMNS, policy.rows())
    print(f"x0 = {ric.x0.tolist()}, max cond(I - P GxZ) = {ric.max_cond_lambda:.3g}", file=sys.stderr)
    run.manifest(["riccati.csv", "policy.csv"])
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    run.require_valid()
    grid = run.grid
    sys_, ric = _riccati(run, grid)
    policy = run.feedback() or synthesize_equilibrium(ric, run.game)
    ens = sample_paths(grid, run.cfg.paths, run.cfg.seed, threads=run.cfg.threads)
    traj = simulate_filtered(ric, sys_, ens, threads=run.cfg.threads)
    t = grid.nodes

    def rows():
        for j in range(ens.count):
            for k in range(grid.N + 1):
                x, Y, Z = traj.x[j, k], traj.Y[j, k], traj.Z[j, k]
                u1, u2 = policy.controls(k, x[1], x[2])
                yield (j, k, t[k], traj.W[j, k], *x, *Y, *Z, u1, u2)

    write_csv(run.out / "trajectories.csv", TRAJECTORY_COLUMNS, rows())
    outputs = ["trajectories.csv"]
    if run.args.dump_noise:
        write_csv(run.out / "ensemble.csv", ["path", "k", "t", "dW", "dB"], ens.to_rows())
        outputs.append("ensemble.csv")
    if run.args.residual:
        stats = decoupling_residual(ric, sys_, ens, threads=run.cfg.threads)
        write_csv(run.out / "residual.csv", ["N", "paths", "rms", "max", "step_rms", "step_max"],
                  [[grid.N, ens.count, stats.rms, stats.max, stats.step_rms, stats.step_max]])
        outputs.append("residual.csv")
    run.manifest(outputs)
    return EXIT_OK


def _costs(run: Run):
    return to_zero_sum(run.spec) if run.zero_sum else (run.spec.cost(1), run.spec.cost(2))


def cmd_oracle(run: Run) -> int:
    run.require_valid()
    tree = run.tree()
    cand = build_candidate(run.spec, tree, run.feedback(tree))
    sol = solve_on_tree(run.spec, cand.policy, tree)
    j1, j2 = (cost_on_tree(sol, c) for c in _costs(run))
    write_csv(run.out / "oracle.csv", ["spec", "N", "J1", "J2"], [[run.cfg.spec_path, tree.depth, j1, j2]])
    outputs = ["oracle.csv"]
    if run.args.node_dump:
        if tree.depth > NODE_DUMP_DEPTH:
            raise UsageError(f"node dump is limited to depth {NODE_DUMP_DEPTH}")
        write_csv(run.out / "nodes.csv", ["k", "w_index", "b_index", "Y", "Z", "y", "z"], node_dump(sol))
        outputs.append("nodes.csv")
    run.manifest(outputs)
    return EXIT_OK


def _write_report(run: Run, name, report) -> None:
    write_csv(run.out / f"{name}.csv", ["player", "deviation", "eps", "J", "margin", "pass"], report.rows())
    (run.out / f"{name}_summary.txt").write_text(report.summary())


def cmd_verify_nash(run: Run) -> int:
    run.require_valid()
    if run.zero_sum:
        raise UsageError("verify-nash needs a nonzero-sum spec; use verify-saddle")
    tree = run.tree()
    cand = build_candidate(run.spec, tree, run.feedback(tree))
    report = nash_check(run.spec, cand, default_deviations(), tree, tol=run.cfg.tol,
                        threads=run.cfg.threads)
    _write_report(run, "nash", report)
    run.manifest(["nash.csv", "nash_summary.txt"])
    print(f"nash check: {'PASS' if report.passed else 'FAIL'} (worst margin {report.worst_margin:.3g})",
          file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_verify_saddle(run: Run) -> int:
    run.require_valid()
    if not run.zero_sum:
        raise UsageError("verify-saddle needs a zero-sum spec")
    tree = run.tree()
    cand = build_candidate(run.spec, tree, run.feedback(tree))
    devs = default_deviations()
    report = saddle_check(run.spec, cand, devs, tree, tol=run.cfg.tol, threads=run.cfg.threads)
    gap = minimax_gap_check(run.spec, cand, devs, tree, threads=run.cfg.threads)
    report.extras.update({
        "sup_inf (family-restricted)": gap.sup_inf,
        "inf_sup (family-restricted)": gap.inf_sup,
        "gap": gap.gap,
        "gap within tolerance": gap.within(run.cfg.tol),
    })
    _write_report(run, "saddle", report)
    run.manifest(["saddle.csv", "saddle_summary.txt"])
    ok = report.passed and gap.within(run.cfg.tol)
    print(f"saddle check: {'PASS' if ok else 'FAIL'} (gap {gap.gap:.3g})", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gateaux(run: Run) -> int:
    run.require_valid()
    tree = run.tree()
    cand = build_candidate(run.spec, tree, run.feedback(tree))
    bound = run.args.tol if run.args.tol is not None else default_tolerance(tree.grid)
    costs = _costs(run)
    rows, ok = [], True
    for d in default_deviations():
        value = gateaux_check(run.spec, cand, d.player, d, tree, eps=run.args.eps, cost=costs[d.player - 1])
        passed = abs(value) <= bound
        ok &= passed
        rows.append([d.player, d.label, run.args.eps, value, bound, int(passed)])
    write_csv(run.out / "gateaux.csv", ["player", "deviation", "eps", "derivative", "bound", "pass"], rows)
    run.manifest(["gateaux.csv"])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_consistency(run: Run) -> int:
    run.require_valid()
    depths = [d for d in (run.cfg.depth - 4, run.cfg.depth - 2, run.cfg.depth) if d >= 1]
    rows, errors, ok = [], [], True
    for N in depths:
        tree = run.tree(N)
        res = filter_consistency_check(run.spec, tree)
        bound = 10.0 * tree.grid.dt
        passed = res.max_error <= bound
        ok &= passed
        errors.append(res.max_error)
        rows.append([N, tree.grid.dt, res.error_Y, res.error_y, bound, int(passed)])
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    write_csv(run.out / "consistency.csv", ["N", "dt", "error_Y", "error_y", "bound", "pass"], rows)
    run.manifest(["consistency.csv"])
    if not monotone:
        print("filter consistency error is not decreasing in N", file=sys.stderr)
    return EXIT_OK if ok and monotone else EXIT_FAIL


def cmd_converge(run: Run) -> int:
    run.require_valid()
    try:
        depths = [int(v) for v in run.args.depths.split(",")]
    except ValueError:
        raise UsageError(f"--depths must be comma-separated integers, got {run.args.depths!r}") from None
    if max(depths) > MAX_TREE_DEPTH:
        raise UsageError(f"oracle commands need depth <= {MAX_TREE_DEPTH}")
    report = convergence_study(run.spec, depths)
    write_csv(run.out / "convergence.csv", ["quantity", "N", "value", "error", "order"], report.rows())
    run.manifest(["convergence.csv"])
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    summaries = sorted(out.glob("*_summary.txt"))
    tables = sorted(p.name for p in out.glob("*.csv"))
    if not summaries and not tables:
        raise UsageError(f"no outputs found in {out}")
    lines, failed = [], False
    for path in summaries:
        text = path.read_text()
        failed |= "result: FAIL" in text
        lines.append(f"== {path.name}")
        lines.append(text.rstrip("\n"))
    lines.append("== tables")
    for name in tables:
        with open(out / name, newline="") as fh:
            n_rows = sum(1 for _ in fh) - 1
        lines.append(f"{name}: {n_rows} rows")
    lines.append(f"overall: {'FAIL' if failed else 'PASS'}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {
    "validate": (cmd_validate, "check a spec against the standing assumptions"),
    "solve": (cmd_solve, "Riccati decoupling and equilibrium policy (riccati.csv, policy.csv)"),
    "simulate": (cmd_simulate, "Monte Carlo filtered trajectories (trajectories.csv)"),
    "oracle": (cmd_oracle, "exact tree costs J1, J2 at a policy (oracle.csv)"),
    "verify-nash": (cmd_verify_nash, "unilateral deviation check on the tree"),
    "verify-saddle": (cmd_verify_saddle, "saddle inequalities and min-max gap on the tree"),
    "gateaux": (cmd_gateaux, "directional derivatives of the costs at a policy"),
    "consistency": (cmd_consistency, "tree filter versus Riccati filter"),
    "converge": (cmd_converge, "self-convergence over tree depths"),
    "report": (None, "aggregate summaries in --out into report.txt"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="spec file or builtin name (specA, specZ)")
    common.add_argument("--depth", type=int, help="time steps N (tree depth)")
    common.add_argument("--paths", type=int, help="Monte Carlo path count")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--tol", type=float, help="tolerance override")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--policy", help="policy CSV with columns " + ",".join(POLICY_COLUMNS))

    parser = argparse.ArgumentParser(prog="fbdsde-games", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {}
    for name, (_, help_text) in COMMANDS.items():
        parsers[name] = sub.add_parser(name, parents=[common], help=help_text)
    parsers["simulate"].add_argument("--dump-noise", action="store_true", help="also write ensemble.csv")
    parsers["simulate"].add_argument("--residual", action="store_true", help="also write residual.csv")
    parsers["oracle"].add_argument("--node-dump", action="store_true", help="write nodes.csv (depth <= 6)")
    parsers["gateaux"].add_argument("--eps", type=float, default=0.1, help="finite-difference step")
    parsers["converge"].add_argument("--depths", default="4,6,8,10", help="comma-separated depths")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "report":
            return cmd_report(args)
        if not args.spec:
            parser.print_usage(sys.stderr)
            print("error: --spec is required", file=sys.stderr)
            return EXIT_USAGE
        handler = COMMANDS[args.command][0]
        return handler(Run(args))
    except NumericalBreakdown as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except FbdsdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
