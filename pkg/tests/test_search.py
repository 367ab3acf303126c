import numpy as np
import pytest

from osscar import (
    ScheduleError,
    SearchSchedule,
    compute_impacts,
    init_state,
    local_step,
    magnitude_prune,
    make_schedule,
    random_problem,
    run_local_search,
    solve_direct,
    stream_rng,
)

from conftest import identity_problem


class TestMakeSchedule:
    def test_nested_even(self):
        assert make_schedule("nested", 6, t_hat=2).steps == ((2, 2), (2, 2), (2, 2))

    def test_nested_trims_last_step(self):
        assert make_schedule("nested", 5, t_hat=2).steps == ((2, 2), (2, 2), (2, 1))

    def test_nested_ffn_style(self):
        steps = make_schedule("nested", 30, t_hat=10).steps
        assert steps == ((10, 10), (10, 10), (10, 10))

    def test_greedy(self):
        assert make_schedule("greedy", 3).steps == ((1, 1), (1, 1), (1, 1))

    def test_non_nested_appends_swap_steps(self):
        steps = make_schedule("non_nested", 4, t_hat=2, extra_swaps=30).steps
        assert steps[:2] == ((2, 2), (2, 2))
        assert steps[2:] == tuple((2, 0) for _ in range(30))

    def test_non_nested_default_swap_count(self):
        steps = make_schedule("non_nested", 2, t_hat=2).steps
        assert len(steps) == 1 + 30

    def test_zero_prune_count(self):
        assert make_schedule("nested", 0, t_hat=2).steps == ()

    def test_custom_requires_steps(self):
        with pytest.raises(ScheduleError):
            make_schedule("custom", 4)
        sched = make_schedule("custom", 4, steps=[(3, 2), (2, 2)])
        assert sched.total_pruned == 4

    def test_unknown_preset(self):
        with pytest.raises(ScheduleError):
            make_schedule("annealed", 4)

    def test_step_validation(self):
        with pytest.raises(ScheduleError):
            SearchSchedule(((2, 3),))
        with pytest.raises(ScheduleError):
            SearchSchedule(((0, 0),))
        with pytest.raises(ScheduleError):
            SearchSchedule(((2, -1),))


class TestComputeImpacts:
    def test_identity_hessian_norms(self):
        state = init_state(identity_problem([3.0, 1.0, 2.0]))
        scores = compute_impacts(state)
        assert scores[0] == pytest.approx(4.5)
        assert scores[1] == pytest.approx(0.5)
        assert scores[2] == pytest.approx(2.0)

    def test_zero_weight_group_scores_zero(self):
        state = init_state(identity_problem([3.0, 0.0, 2.0]))
        assert compute_impacts(state)[1] == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_differences_both_sides(self):
        problem = random_problem(stream_rng(0, "impacts"), p=8, group_size=2, d2=3)
        state = init_state(problem).shrink([1, 5])
        scores = compute_impacts(state)
        f_base, _ = solve_direct(problem, [1, 5])
        for j in range(8):
            if j in (1, 5):
                f_other, _ = solve_direct(problem, sorted({1, 5} - {j}))
                expected = f_base - f_other
            else:
                f_other, _ = solve_direct(problem, sorted({1, 5} | {j}))
                expected = f_other - f_base
            assert scores[j] == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_sides_can_be_skipped(self):
        problem = random_problem(stream_rng(1, "impacts-side"), p=6, d2=2)
        state = init_state(problem).shrink([0])
        out_only = compute_impacts(state, candidates_in=False)
        assert 0 not in out_only and len(out_only) == 5
        in_only = compute_impacts(state, candidates_out=False)
        assert set(in_only) == {0}

    def test_singleton_fast_path_matches_scalar_scoring(self):
        problem = random_problem(stream_rng(2, "impacts-fast"), p=12, d2=3)
        state = init_state(problem).shrink([2, 9])
        scores = compute_impacts(state, candidates_in=False)
        for j, value in scores.items():
            assert value == pytest.approx(state.score_removal(j), rel=1e-12)


class TestLocalStep:
    def test_pure_growth_direction_split(self):
        # t=2, p=2 adds two groups and evicts none; the minimizing reading
        # takes the two cheapest, the literal one the two costliest.
        problem = identity_problem([3.0, 1.0, 2.0])
        state = init_state(problem)
        state = local_step(state, 2, 2, direction="min_impact")
        assert state.pruned.tolist() == [1, 2]

        state2 = init_state(problem)
        state2 = local_step(state2, 2, 2, direction="max_impact")
        assert state2.pruned.tolist() == [0, 2]

    def test_single_addition_is_greedy_step(self):
        state = init_state(identity_problem([3.0, 1.0, 2.0]))
        state = local_step(state, 1, 1)
        assert state.pruned.tolist() == [1]

    def test_swap_step_accepts_strict_improvement(self):
        problem = random_problem(stream_rng(3, "swap-accept"), p=6, d2=2)
        state = init_state(problem).shrink([0])  # deliberately poor start
        scores = compute_impacts(state)
        worst = state.objective
        state = local_step(state, 2, 0)
        assert state.objective <= worst + 1e-12

    def test_swap_step_rejects_non_improvement(self):
        # start from the separable optimum: any one-for-one swap is worse
        problem = identity_problem([3.0, 1.0, 2.0])
        state = init_state(problem).shrink([1])
        f0 = state.objective
        state = local_step(state, 2, 0)
        assert state.pruned.tolist() == [1]
        assert state.objective == pytest.approx(f0)

    def test_noop_when_window_empty(self):
        problem = identity_problem([3.0, 1.0, 2.0])
        state = init_state(problem)
        state = local_step(state, 1, 0)  # s1 = s2 = 0
        assert state.pruned_count == 0

    def test_clamp_small_pruned_set(self):
        # t=6, p=0 wants to evict 3 but only 1 is pruned: both sides clamp to 1
        problem = random_problem(stream_rng(4, "clamp"), p=6, d2=2)
        state = init_state(problem).shrink([3])
        state = local_step(state, 6, 0)
        assert state.pruned_count == 1

    def test_infeasible_growth_rejected(self):
        problem = identity_problem([3.0, 1.0, 2.0])
        state = init_state(problem).shrink([0, 1])
        with pytest.raises(ScheduleError):
            local_step(state, 2, 2)

    def test_p_exceeding_t_rejected(self):
        state = init_state(identity_problem([3.0, 1.0, 2.0]))
        with pytest.raises(ScheduleError):
            local_step(state, 1, 2)


class TestRunLocalSearch:
    def test_identity_greedy_prunes_smallest_norms(self):
        problem = identity_problem([3.0, 1.0, 2.0])
        report, _ = run_local_search(problem, make_schedule("greedy", 2))
        assert report.pruned_groups == (1, 2)
        assert report.objective == pytest.approx(-4.5)

    def test_prune_all_reaches_zero(self):
        problem = random_problem(stream_rng(5, "all"), p=5, d2=2)
        report, _ = run_local_search(problem, make_schedule("greedy", 5))
        assert report.pruned_groups == (0, 1, 2, 3, 4)
        assert report.objective == pytest.approx(0.0, abs=1e-9)

    def test_cardinality_exact_after_each_step(self):
        problem = random_problem(stream_rng(6, "card"), p=9, d2=3)
        schedule = make_schedule("nested", 7, t_hat=3)
        report, _ = run_local_search(problem, schedule)
        expected = np.cumsum([p for _, p in schedule.steps])
        assert [t.pruned_count for t in report.trace] == expected.tolist()

    def test_final_objective_consistent_with_direct(self):
        problem = random_problem(stream_rng(7, "consistency"), p=10, group_size=2, d2=4)
        report, state = run_local_search(problem, make_schedule("nested", 5, t_hat=2))
        f_direct, _ = solve_direct(problem, report.pruned_groups)
        assert report.objective == pytest.approx(f_direct, rel=1e-6)
        assert state.pruned.tolist() == list(report.pruned_groups)

    def test_swap_phase_never_worsens(self):
        problem = random_problem(stream_rng(8, "swap-mono"), p=10, d2=3)
        schedule = make_schedule("non_nested", 5, t_hat=2, extra_swaps=10)
        report, _ = run_local_search(problem, schedule)
        growth_steps = sum(1 for _, p in schedule.steps if p > 0)
        objectives = [t.objective for t in report.trace[growth_steps - 1 :]]
        assert all(b <= a + 1e-12 for a, b in zip(objectives, objectives[1:]))

    def test_non_nested_no_worse_than_nested(self):
        problem = random_problem(stream_rng(9, "dominance"), p=12, d2=4)
        nested, _ = run_local_search(problem, make_schedule("nested", 6, t_hat=2))
        non_nested, _ = run_local_search(
            problem, make_schedule("non_nested", 6, t_hat=2, extra_swaps=15)
        )
        assert non_nested.objective <= nested.objective + 1e-12

    def test_schedule_exceeding_group_count_rejected(self):
        problem = identity_problem([1.0, 2.0])
        with pytest.raises(ScheduleError):
            run_local_search(problem, make_schedule("greedy", 3))

    def test_trace_timing_toggle(self):
        problem = identity_problem([3.0, 1.0, 2.0])
        report, _ = run_local_search(problem, make_schedule("greedy", 1), keep_timing=False)
        assert report.total_ms is None
        assert report.trace[0].wall_ms is None
        payload = report.to_dict(include_timing=False)
        assert "total_ms" not in payload
        assert "wall_ms" not in payload["trace"][0]


class TestGreedyEquivalence:
    @staticmethod
    def forward_greedy(problem, p_prime):
        """Reference selector: repeatedly prune the group whose removal
        raises the objective least, by direct re-solve."""
        selected = []
        for _ in range(p_prime):
            best_j, best_f = None, None
            for j in range(problem.p):
                if j in selected:
                    continue
                value, _ = solve_direct(problem, sorted(selected + [j]))
                if best_f is None or value < best_f - 1e-15:
                    best_j, best_f = j, value
            selected.append(best_j)
        return tuple(sorted(selected)), best_f

    def test_matches_independent_greedy(self):
        for i in range(10):
            rng = stream_rng(10, f"greedy-{i}")
            p = int(rng.integers(4, 11))
            problem = random_problem(rng, p=p, group_size=int(rng.integers(1, 3)), d2=3)
            p_prime = int(rng.integers(1, p))
            expected_s, expected_f = self.forward_greedy(problem, p_prime)
            report, _ = run_local_search(problem, make_schedule("greedy", p_prime))
            assert report.pruned_groups == expected_s
            assert report.objective == pytest.approx(expected_f, rel=1e-9)


class TestMagnitudePrune:
    def test_selects_smallest_norm(self):
        problem = identity_problem([3.0, 1.0, 2.0])
        report = magnitude_prune(problem, 1)
        assert report.pruned_groups == (1,)
        assert report.method == "mp"

    def test_tie_breaks_to_lower_index(self):
        problem = identity_problem([2.0, 1.0, 1.0, 3.0])
        report = magnitude_prune(problem, 1)
        assert report.pruned_groups == (1,)

    def test_identity_hessian_refit_changes_nothing(self):
        problem = identity_problem([3.0, 1.0, 2.0])
        plain = magnitude_prune(problem, 2, refit=False)
        refit = magnitude_prune(problem, 2, refit=True)
        assert plain.pruned_groups == refit.pruned_groups
        assert plain.objective == pytest.approx(refit.objective, rel=1e-12)

    def test_refit_never_worse(self):
        for i in range(15):
            problem = random_problem(stream_rng(11, f"mp-{i}"), p=9, group_size=2, d2=4)
            plain = magnitude_prune(problem, 4, refit=False)
            refit = magnitude_prune(problem, 4, refit=True)
            assert refit.pruned_groups == plain.pruned_groups
            assert refit.objective <= plain.objective + 1e-10

    def test_refit_matches_direct(self):
        problem = random_problem(stream_rng(12, "mp-direct"), p=6, d2=3)
        report = magnitude_prune(problem, 3, refit=True)
        f_direct, _ = solve_direct(problem, report.pruned_groups)
        assert report.objective == pytest.approx(f_direct, rel=1e-12)

    def test_report_speedup_accounting(self):
        problem = identity_problem([3.0, 1.0, 2.0, 4.0])
        report = magnitude_prune(problem, 2)
        assert report.speedup == pytest.approx(2.0)


class TestConcurrentScoring:
    def test_parallel_scores_match_serial(self):
        # large non-singleton instance so the threaded path actually engages
        from osscar import set_thread_budget
        from osscar.oracle import random_problem, stream_rng

        problem = random_problem(stream_rng(20, "par"), p=100, group_size=2, d2=4)
        state = init_state(problem, rebuild_every=None).shrink(range(0, 20))
        set_thread_budget(1)
        try:
            serial = compute_impacts(state)
        finally:
            set_thread_budget(None)
        set_thread_budget(4)
        try:
            parallel = compute_impacts(state)
        finally:
            set_thread_budget(None)
        assert serial == parallel  # identical floats, not just close


class TestRaggedPartitions:
    def test_search_on_custom_groups_matches_brute_force_bound(self):
        from osscar import GroupPartition, QuadraticProblem, brute_force
        from osscar.oracle import stream_rng
        from conftest import spd_matrix

        rng = stream_rng(21, "ragged")
        groups = (np.array([0, 3]), np.array([1]), np.array([2, 4, 5]), np.array([6]))
        partition = GroupPartition(7, groups)
        problem = QuadraticProblem(
            spd_matrix(rng, 7), rng.standard_normal((7, 3)), partition
        )
        report, state = run_local_search(
            problem, make_schedule("non_nested", 2, t_hat=2, extra_swaps=6)
        )
        assert len(report.pruned_groups) == 2
        optimum = brute_force(problem, 2).best_objective
        assert report.objective >= optimum - 1e-9
        f_direct, _ = solve_direct(problem, report.pruned_groups)
        assert report.objective == pytest.approx(f_direct, rel=1e-8)
