"""Oracle-backed checks of equilibrium, saddle and stationarity properties."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .filtering import (
    FeedbackPolicy,
    RiccatiSolution,
    assemble_filtering_system,
    simulate_filtered,
    solve_decoupling,
    synthesize_equilibrium,
)
from .model import LqGameSpec, QuadraticCost, ZeroSumSpec
from .noise import TimeGrid, TreeNoise, enumerate_tree, make_grid
from .oracle import PolicyOnTree, cost_on_tree, filter_on_tree, policy_on_tree, solve_on_tree

__all__ = [
    "EPS_GRID",
    "VALUE_TOL",
    "Deviation",
    "DeviationSet",
    "DeviationResult",
    "GameReport",
    "GapReport",
    "FilterConsistency",
    "ConvergenceReport",
    "Candidate",
    "default_tolerance",
    "default_deviations",
    "build_candidate",
    "nash_check",
    "gateaux_check",
    "saddle_check",
    "minimax_gap_check",
    "filter_consistency_check",
    "convergence_study",
]

EPS_GRID = (-1.0, -0.5, -0.25, -0.1, -0.05, 0.05, 0.1, 0.25, 0.5, 1.0)
VALUE_TOL = 5e-3
DEVIATION_KINDS = ("constant", "sinusoid", "w-feedback")


def default_tolerance(grid: TimeGrid) -> float:
    """``max(5e-3, 10 dt)``, the default for derivative and filter comparisons."""
    return max(VALUE_TOL, 10.0 * grid.dt)


@dataclass(frozen=True)
class Deviation:
    """Bounded W-adapted perturbation direction of one player.

    ``constant``: ``(c,)``; ``sinusoid``: ``(amplitude, frequency, phase)``
    giving ``A sin(2 pi f t + phase)``; ``w-feedback``: ``(gain, offset)``
    giving ``gain * W(t) + offset``.
    """

    player: int
    kind: str
    params: tuple

    def __post_init__(self):
        if self.player not in (1, 2):
            raise InvalidArgument(f"player must be 1 or 2, got {self.player}")
        if self.kind not in DEVIATION_KINDS:
            raise InvalidArgument(f"unknown deviation kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def __call__(self, t, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "constant":
            return np.full(w.shape, self.params[0])
        if self.kind == "sinusoid":
            amp, freq, phase = self.params
            return np.full(w.shape, amp * math.sin(2.0 * math.pi * freq * t + phase))
        gain, offset = self.params
        return gain * w + offset

    def levels(self, tree: TreeNoise) -> list[np.ndarray]:
        t = tree.grid.nodes
        return [self(t[k], tree.w_values(k)) for k in range(tree.depth)]

    @property
    def label(self) -> str:
        return f"{self.kind}({', '.join(f'{p:g}' for p in self.params)})"


@dataclass(frozen=True)
class DeviationSet:
    deviations: tuple

    def __post_init__(self):
        object.__setattr__(self, "deviations", tuple(self.deviations))

    def __iter__(self):
        return iter(self.deviations)

    def __len__(self):
        return len(self.deviations)

    def for_player(self, player: int) -> list[Deviation]:
        return [d for d in self.deviations if d.player == player]


_DEFAULT_SHAPES = (
    ("constant", (1.0,)),
    ("constant", (0.5,)),
    ("sinusoid", (1.0, 0.5, 0.0)),
    ("sinusoid", (1.0, 1.0, 0.0)),
    ("sinusoid", (1.0, 1.0, math.pi / 2)),
    ("sinusoid", (0.5, 2.0, 0.3)),
    ("w-feedback", (1.0, 0.0)),
    ("w-feedback", (0.5, 0.5)),
    ("w-feedback", (-1.0, 1.0)),
    ("w-feedback", (2.0, -0.5)),
)


def default_deviations(players=(1, 2)) -> DeviationSet:
    """Ten deviation directions per player: constants, sinusoids and W-feedback."""
    return DeviationSet(Deviation(p, kind, params) for p in players for kind, params in _DEFAULT_SHAPES)


@dataclass(frozen=True, eq=False)
class Candidate:
    """Candidate equilibrium prepared on one tree."""

    tree: TreeNoise
    ric: RiccatiSolution
    feedback: FeedbackPolicy
    policy: PolicyOnTree


def build_candidate(spec, tree: TreeNoise, feedback: FeedbackPolicy | None = None) -> Candidate:
    """Riccati synthesis on the tree grid followed by composition onto the tree.

    Zero-sum specs are synthesized through their equivalent signed game.
    """
    game = spec.equivalent_game() if isinstance(spec, ZeroSumSpec) else spec
    sys = assemble_filtering_system(game, check=not isinstance(spec, ZeroSumSpec))
    ric = solve_decoupling(sys, tree.grid)
    feedback = synthesize_equilibrium(ric, game) if feedback is None else feedback
    return Candidate(tree, ric, feedback, policy_on_tree(feedback, ric, sys, tree))


def _as_tree_policy(spec, pol, tree: TreeNoise) -> PolicyOnTree:
    if isinstance(pol, PolicyOnTree):
        return pol
    if isinstance(pol, Candidate):
        return pol.policy
    if isinstance(pol, FeedbackPolicy):
        return build_candidate(spec, tree, pol).policy
    raise InvalidArgument(f"cannot place {type(pol).__name__} on the tree")


@dataclass(frozen=True)
class DeviationResult:
    player: int
    label: str
    eps: float
    value: float
    margin: float
    passed: bool


@dataclass
class GameReport:
    """Candidate values, per-deviation margins and the overall verdict.

    A margin is the candidate's advantage over the deviation for the
    deviating player, so ``margin >= -tol`` means the inequality holds.
    """

    kind: str
    tol: float
    candidate_values: dict
    results: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def worst_margin(self) -> float:
        return min((r.margin for r in self.results), default=0.0)

    def failures(self) -> list[DeviationResult]:
        return [r for r in self.results if not r.passed]

    def rows(self):
        for r in self.results:
            yield r.player, r.label, r.eps, r.value, r.margin, int(r.passed)

    def summary(self) -> str:
        lines = [
            f"check: {self.kind}",
            f"result: {'PASS' if self.passed else 'FAIL'}",
            f"tolerance: {self.tol!r}",
            f"deviations evaluated: {len(self.results)}",
            f"worst margin: {self.worst_margin!r}",
            "deviation family: sampled (constants, sinusoids, W-feedback); family-restricted",
        ]
        lines += [f"candidate {k}: {v!r}" for k, v in self.candidate_values.items()]
        lines += [f"{k}: {v!r}" for k, v in self.extras.items()]
        return "\n".join(lines) + "\n"


def _evaluate(spec, pol: PolicyOnTree, tree: TreeNoise, costs):
    sol = solve_on_tree(spec, pol, tree)
    return [cost_on_tree(sol, c) for c in costs]


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def nash_check(spec: LqGameSpec, pol, devs: DeviationSet, tree: TreeNoise, tol: float = VALUE_TOL,
               eps_grid=EPS_GRID, costs: tuple | None = None, threads: int = 1) -> GameReport:
    """Unilateral deviation test: ``J_i(u_i + eps beta, u_-i) <= J_i(u) + tol`` for all samples.

    ``costs`` optionally replaces ``(J1, J2)`` by signed views.
    """
    if len(devs) == 0:
        raise InvalidArgument("deviation set is empty")
    pt = _as_tree_policy(spec, pol, tree)
    costs = (spec.cost(1), spec.cost(2)) if costs is None else tuple(costs)
    base = _evaluate(spec, pt, tree, costs)
    jobs = [(d, e) for d in devs for e in eps_grid]

    def run(job):
        d, e = job
        return _evaluate(spec, pt.perturbed(d.player, e, d.levels(tree)), tree, (costs[d.player - 1],))[0]

    values = _map(run, jobs, threads)
    report = GameReport("nash", tol, {"J1": base[0], "J2": base[1]})
    for (d, e), v in zip(jobs, values):
        margin = base[d.player - 1] - v
        report.results.append(DeviationResult(d.player, d.label, e, v, margin, margin >= -tol))
    return report


def gateaux_check(spec, pol, i: int, beta: Deviation, tree: TreeNoise, eps: float = 0.1,
                  cost: QuadraticCost | None = None) -> float:
    """Central difference ``[J_i(u + eps beta) - J_i(u - eps beta)] / (2 eps)``.

    ``J_i`` is quadratic in ``eps``, so the estimate is the exact directional
    derivative of the discrete functional for every ``eps``.
    """
    if eps <= 0:
        raise InvalidArgument("eps must be positive")
    pt = _as_tree_policy(spec, pol, tree)
    cost = spec.cost(i) if cost is None else cost
    levels = beta.levels(tree)
    up = _evaluate(spec, pt.perturbed(i, eps, levels), tree, (cost,))[0]
    down = _evaluate(spec, pt.perturbed(i, -eps, levels), tree, (cost,))[0]
    return (up - down) / (2.0 * eps)


def saddle_check(zs: ZeroSumSpec, pol, devs: DeviationSet, tree: TreeNoise, tol: float = VALUE_TOL,
                 eps_grid=EPS_GRID, threads: int = 1) -> GameReport:
    """``J(u1, v2) <= J(u) + tol`` and ``J(u) <= J(v1, u2) + tol`` over the sampled family."""
    if not devs.for_player(1) or not devs.for_player(2):
        raise InvalidArgument("saddle check needs deviations for both players")
    pt = _as_tree_policy(zs, pol, tree)
    J = zs.cost()
    base = _evaluate(zs, pt, tree, (J,))[0]
    jobs = [(d, e) for d in devs for e in eps_grid]

    def run(job):
        d, e = job
        return _evaluate(zs, pt.perturbed(d.player, e, d.levels(tree)), tree, (J,))[0]

    values = _map(run, jobs, threads)
    report = GameReport("saddle", tol, {"J": base})
    for (d, e), v in zip(jobs, values):
        margin = v - base if d.player == 1 else base - v
        report.results.append(DeviationResult(d.player, d.label, e, v, margin, margin >= -tol))
    return report


@dataclass(frozen=True)
class GapReport:
    """Family-restricted min-max values: ``gap = infsup - supinf``."""

    sup_inf: float
    inf_sup: float
    candidate_value: float
    candidate_in_family: bool
    family_sizes: tuple

    @property
    def gap(self) -> float:
        return self.inf_sup - self.sup_inf

    def within(self, tol: float) -> bool:
        return (abs(self.gap) <= tol
                and self.sup_inf - tol <= self.candidate_value <= self.inf_sup + tol
                and abs(self.candidate_value - self.sup_inf) <= tol
                and abs(self.candidate_value - self.inf_sup) <= tol)

    @property
    def flags(self) -> list[str]:
        return [] if self.candidate_in_family else ["candidate not in family"]


def minimax_gap_check(zs: ZeroSumSpec, pol, devs: DeviationSet, tree: TreeNoise,
                      eps_grid=(-0.25, -0.1, 0.1, 0.25), include_candidate: bool = True,
                      threads: int = 1) -> GapReport:
    """Max-min and min-max of ``J`` over ``{u_i + eps beta}`` families for both players."""
    pt = _as_tree_policy(zs, pol, tree)
    fam = []
    for player in (1, 2):
        members = [(0.0, None)] if include_candidate else []
        members += [(e, d.levels(tree)) for d in devs.for_player(player) for e in eps_grid]
        if not members:
            raise InvalidArgument(f"empty family for player {player}")
        fam.append(members)
    J = zs.cost()

    def run(pair):
        (e1, b1), (e2, b2) = pair
        p = pt if b1 is None else pt.perturbed(1, e1, b1)
        p = p if b2 is None else p.perturbed(2, e2, b2)
        return _evaluate(zs, p, tree, (J,))[0]

    pairs = [(m1, m2) for m1 in fam[0] for m2 in fam[1]]
    table = np.array(_map(run, pairs, threads)).reshape(len(fam[0]), len(fam[1]))
    base = _evaluate(zs, pt, tree, (J,))[0]
    return GapReport(
        sup_inf=float(table.min(axis=0).max()),
        inf_sup=float(table.max(axis=1).min()),
        candidate_value=base,
        candidate_in_family=include_candidate,
        family_sizes=table.shape,
    )


@dataclass(frozen=True)
class FilterConsistency:
    error_Y: float
    error_y: float

    @property
    def max_error(self) -> float:
        return max(self.error_Y, self.error_y)


def filter_consistency_check(spec: LqGameSpec, tree: TreeNoise,
                             ric: RiccatiSolution | None = None) -> FilterConsistency:
    """Tree-filtered ``Y``, ``y`` at the Riccati policy versus the Riccati ``Y~``, ``y~``.

    Both are evaluated on every W-prefix of every level.
    """
    game = spec.equivalent_game() if isinstance(spec, ZeroSumSpec) else spec
    sys = assemble_filtering_system(game, check=not isinstance(spec, ZeroSumSpec))
    ric = solve_decoupling(sys, tree.grid) if ric is None else ric
    pt = policy_on_tree(synthesize_equilibrium(ric, game), ric, sys, tree)
    sol = solve_on_tree(spec, pt, tree)
    traj = simulate_filtered(ric, sys, tree.w_paths)
    N = tree.depth
    err_Y = err_y = 0.0
    for k in range(N + 1):
        stride = 2 ** (N - k)
        Yk = filter_on_tree(np.broadcast_to(sol.Y[k], (2**k, stride)))
        yk = filter_on_tree(sol.y[k])
        err_Y = max(err_Y, float(np.max(np.abs(Yk - traj.Y[::stride, k, 0]))))
        err_y = max(err_y, float(np.max(np.abs(yk - traj.x[::stride, k, 0]))))
    return FilterConsistency(err_Y, err_y)


@dataclass
class ConvergenceReport:
    """Per-quantity values, errors and observed orders over increasing ``N``.

    ``orders[name][j]`` compares ``Ns[j]`` with ``Ns[j + 1]``; it is ``None``
    when both errors vanish (``exact[name]`` is then true).
    """

    Ns: list
    values: dict
    references: dict
    errors: dict
    orders: dict
    exact: dict

    def rows(self):
        for name, vals in self.values.items():
            for j, N in enumerate(self.Ns):
                err = self.errors[name][j]
                order = self.orders[name][j] if j < len(self.orders[name]) else None
                yield name, N, vals[j], err, "" if order is None else order


def observed_order(err_a: float, err_b: float, N_a: int, N_b: int):
    if err_a == 0.0 and err_b == 0.0:
        return None
    if err_a == 0.0 or err_b == 0.0:
        return math.nan
    return math.log(err_a / err_b) / math.log(N_b / N_a)


def convergence_study(spec, Ns, reference: dict | None = None) -> ConvergenceReport:
    """Tree value of ``E[Y(0)]`` and the costs at the Riccati candidate for each ``N``.

    Quantities without an entry in ``reference`` are compared with the
    finest ``N`` (whose own error is then zero and excluded from orders).
    """
    Ns = [int(n) for n in Ns]
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise InvalidArgument("Ns must be increasing")
    reference = dict(reference or {})
    zero_sum = isinstance(spec, ZeroSumSpec)
    names = ("Y0", "J") if zero_sum else ("Y0", "J1", "J2")
    values = {n: [] for n in names}
    for N in Ns:
        tree = enumerate_tree(make_grid(spec.horizon, N))
        cand = build_candidate(spec, tree)
        sol = solve_on_tree(spec, cand.policy, tree)
        values["Y0"].append(float(np.mean(sol.Y[0])))
        if zero_sum:
            values["J"].append(cost_on_tree(sol, spec.cost()))
        else:
            values["J1"].append(cost_on_tree(sol, spec.cost(1)))
            values["J2"].append(cost_on_tree(sol, spec.cost(2)))
    errors, orders, exact, refs = {}, {}, {}, {}
    for name in names:
        vals = values[name]
        self_ref = name not in reference
        refs[name] = vals[-1] if self_ref else float(reference[name])
        errs = [abs(v - refs[name]) for v in vals]
        errors[name] = errs
        usable = len(Ns) - 1 if self_ref else len(Ns)
        orders[name] = [observed_order(errs[j], errs[j + 1], Ns[j], Ns[j + 1])
                        for j in range(usable - 1)]
        exact[name] = all(e == 0.0 for e in errs)
    return ConvergenceReport(Ns, values, refs, errors, orders, exact)
