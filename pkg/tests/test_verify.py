import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbdsde_games.errors import InvalidArgument
from fbdsde_games.model import LqGameSpec, ZeroSumSpec, to_zero_sum
from fbdsde_games.noise import enumerate_tree, make_grid
from fbdsde_games.oracle import eval_cost_on_tree, solve_on_tree
from fbdsde_games.verify import (
    EPS_GRID,
    Deviation,
    DeviationSet,
    build_candidate,
    convergence_study,
    default_deviations,
    default_tolerance,
    filter_consistency_check,
    gateaux_check,
    minimax_gap_check,
    nash_check,
    observed_order,
    saddle_check,
)


def tree_of(N):
    return enumerate_tree(make_grid(1.0, N))


@pytest.fixture(scope="module")
def candA(specA):
    return build_candidate(specA, tree_of(8))


@pytest.fixture(scope="module")
def candZ(specZ):
    return build_candidate(specZ, tree_of(8))


class TestDeviations:
    def test_default_family(self):
        devs = default_deviations()
        assert len(devs) == 20
        assert len(devs.for_player(1)) == len(devs.for_player(2)) == 10
        assert {d.kind for d in devs} == {"constant", "sinusoid", "w-feedback"}

    def test_adapted_and_bounded_levels(self):
        tree = tree_of(5)
        for d in default_deviations(players=(1,)):
            levels = d.levels(tree)
            assert [lv.shape for lv in levels] == [(2**k,) for k in range(5)]
            assert all(np.all(np.isfinite(lv)) for lv in levels)

    def test_sinusoid_values(self):
        d = Deviation(1, "sinusoid", (2.0, 1.0, 0.0))
        assert d(0.25, np.zeros(3)) == pytest.approx(np.full(3, 2.0))

    @pytest.mark.parametrize("player,kind", [(3, "constant"), (1, "spline")])
    def test_rejects_bad_input(self, player, kind):
        with pytest.raises(InvalidArgument):
            Deviation(player, kind, (1.0,))

    def test_tolerance_floor(self):
        assert default_tolerance(make_grid(1.0, 8)) == 10 / 8
        assert default_tolerance(make_grid(1.0, 4096)) == 5e-3


class TestNash:
    def test_dead_dynamics_exact_loss(self):
        # with a3 = a4 = 0 a deviation only changes the control penalty
        spec = LqGameSpec(a1=0.3, c1=-0.2, d0=0.3, terminal=(1.0, 0.5)).with_weights(e17=2.0, e11=0.4)
        tree = tree_of(6)
        d = Deviation(1, "w-feedback", (1.0, 0.5))
        report = nash_check(spec, build_candidate(spec, tree), DeviationSet([d]), tree)
        dt = tree.grid.dt
        energy = sum(dt * np.mean(b**2) for b in d.levels(tree))
        for r in report.results:
            assert r.margin == pytest.approx(0.5 * 2.0 * r.eps**2 * energy, abs=1e-12)
        assert report.passed

    def test_candidate_passes(self, specA, candA):
        report = nash_check(specA, candA, default_deviations(), candA.tree)
        assert report.passed
        assert len(report.results) == 20 * len(EPS_GRID)
        assert report.worst_margin >= -5e-3

    def test_shifted_policy_fails(self, specA, candA):
        report = nash_check(specA, candA.feedback.shifted(0.2), default_deviations(), candA.tree)
        assert not report.passed
        assert report.worst_margin < -0.1
        assert any(r.player == 1 for r in report.failures())

    def test_values_are_parabolas_in_eps(self, specA, candA):
        tree = candA.tree
        d = default_deviations().for_player(2)[6]
        eps = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
        vals = [eval_cost_on_tree(specA, 2, solve_on_tree(specA, candA.policy.perturbed(2, e, d.levels(tree)), tree))
                for e in eps]
        coef = np.polyfit(eps, vals, 2)
        assert np.max(np.abs(np.polyval(coef, eps) - vals)) < 1e-10

    def test_summary_mentions_family(self, specA, candA):
        report = nash_check(specA, candA, default_deviations(players=(1,)), candA.tree, eps_grid=(0.1,))
        text = report.summary()
        assert "family-restricted" in text and "result: PASS" in text

    def test_thread_count_does_not_change_report(self, specA):
        tree = tree_of(5)
        cand = build_candidate(specA, tree)
        a = nash_check(specA, cand, default_deviations(), tree)
        b = nash_check(specA, cand, default_deviations(), tree, threads=4)
        assert list(a.rows()) == list(b.rows())

    def test_empty_family_rejected(self, specA, candA):
        with pytest.raises(InvalidArgument):
            nash_check(specA, candA, DeviationSet([]), candA.tree)


class TestGateaux:
    def test_dead_channel(self):
        spec = LqGameSpec(a2=0.3, a4=1.0, d0=0.2, terminal=(0.5, 0.3))
        tree = tree_of(5)
        d = Deviation(1, "constant", (1.0,))
        assert gateaux_check(spec, build_candidate(spec, tree), 1, d, tree) == 0.0

    def test_stationary_at_candidate(self, specA, candA):
        bound = default_tolerance(candA.tree.grid)
        for d in default_deviations():
            assert abs(gateaux_check(specA, candA, d.player, d, candA.tree)) <= bound

    def test_shifted_policy_is_not_stationary(self, specA, candA):
        d = default_deviations().for_player(1)[0]
        g = gateaux_check(specA, candA.feedback.shifted(0.2), 1, d, candA.tree)
        assert g < -default_tolerance(candA.tree.grid)

    @given(st.floats(0.01, 2.0))
    def test_independent_of_step(self, specA, eps):
        tree = tree_of(3)
        cand = build_candidate(specA, tree)
        d = Deviation(2, "sinusoid", (1.0, 1.0, 0.0))
        ref = gateaux_check(specA, cand, 2, d, tree, eps=0.1)
        assert gateaux_check(specA, cand, 2, d, tree, eps=eps) == pytest.approx(ref, abs=1e-9)

    def test_rejects_nonpositive_step(self, specA, candA):
        with pytest.raises(InvalidArgument):
            gateaux_check(specA, candA, 1, Deviation(1, "constant", (1.0,)), candA.tree, eps=0.0)


class TestSaddle:
    def test_candidate_is_saddle(self, specZ, candZ):
        report = saddle_check(specZ, candZ, default_deviations(), candZ.tree)
        assert report.passed

    def test_swapped_roles_fail(self, specZ, candZ):
        assert not saddle_check(specZ, candZ.policy.swapped(), default_deviations(), candZ.tree).passed

    def test_symmetric_instance(self):
        zs = ZeroSumSpec(a1=0.2, a3=1.0, a4=1.0, d0=0.2, M=0.5, terminal=(0.5, 0.3),
                         l1=0.2, l3=0.1, r1=3.0, r2=3.0)
        tree = tree_of(6)
        assert saddle_check(zs, build_candidate(zs, tree), default_deviations(), tree).passed

    def test_agrees_with_nash_on_signed_views(self, specZ, candZ):
        devs = default_deviations()
        saddle = saddle_check(specZ, candZ, devs, candZ.tree)
        nash = nash_check(specZ, candZ, devs, candZ.tree, costs=to_zero_sum(specZ))
        assert saddle.passed == nash.passed
        np.testing.assert_allclose([r.margin for r in saddle.results], [r.margin for r in nash.results],
                                   atol=1e-12)

    def test_needs_both_players(self, specZ, candZ):
        with pytest.raises(InvalidArgument):
            saddle_check(specZ, candZ, default_deviations(players=(1,)), candZ.tree)


class TestMinimax:
    def test_singleton_families(self, specZ):
        tree = tree_of(4)
        cand = build_candidate(specZ, tree)
        report = minimax_gap_check(specZ, cand, DeviationSet([]), tree)
        assert report.gap == 0.0 and report.family_sizes == (1, 1)
        assert report.within(0.0)

    def test_candidate_value_within_gap(self, specZ, candZ):
        report = minimax_gap_check(specZ, candZ, default_deviations(), candZ.tree)
        assert report.within(5e-3)
        assert report.flags == []

    def test_flag_without_candidate(self, specZ):
        tree = tree_of(4)
        report = minimax_gap_check(specZ, build_candidate(specZ, tree), default_deviations(), tree,
                                   include_candidate=False)
        assert "candidate not in family" in report.flags


class TestFilterConsistency:
    def test_zero_game(self):
        fc = filter_consistency_check(LqGameSpec(), tree_of(4))
        assert fc.max_error == 0.0

    def test_exponential(self, exp_spec):
        tree = tree_of(8)
        assert filter_consistency_check(exp_spec, tree).max_error <= default_tolerance(tree.grid)

    def test_monotone_on_instance(self, specA):
        errs = [filter_consistency_check(specA, tree_of(N)).max_error for N in (4, 6, 8)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] <= default_tolerance(make_grid(1.0, 8))


class TestConvergence:
    def test_exponential_first_order(self, exp_spec):
        rep = convergence_study(exp_spec, [4, 8, 12], reference={"Y0": math.e})
        assert all(0.7 <= p <= 1.3 for p in rep.orders["Y0"])

    def test_trivial_game_is_exact(self):
        rep = convergence_study(LqGameSpec(), [2, 4, 6])
        assert all(rep.exact.values())
        assert all(p is None for p in rep.orders["Y0"])

    def test_zero_sum_quantities(self, specZ):
        rep = convergence_study(specZ, [2, 4])
        assert set(rep.values) == {"Y0", "J"}

    def test_order_helper(self):
        assert observed_order(0.2, 0.1, 4, 8) == pytest.approx(1.0)
        assert observed_order(0.0, 0.0, 4, 8) is None
        assert math.isnan(observed_order(0.0, 0.1, 4, 8))

    def test_increasing_depths_required(self, specA):
        with pytest.raises(InvalidArgument):
            convergence_study(specA, [6, 4])
