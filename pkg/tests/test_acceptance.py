"""Acceptance gate: one test per shipped guarantee, each printing a
PASS/FAIL line.  Tolerances are pinned here and nowhere else.

Timing-based checks (criterion 7) measure real wall time; to keep machine
noise from failing a correct build they take the best of a few attempts,
never loosening the thresholds themselves.
"""

import itertools
import json
import time
from pathlib import Path

import numpy as np

import osscar.bench as bench
from osscar import (
    brute_force,
    build_conv,
    build_dense,
    CalibrationBatch,
    ChainLayer,
    ConvSpec,
    compute_impacts,
    direction_test,
    flatten_filter_bank,
    gap_suite,
    init_state,
    magnitude_prune,
    make_schedule,
    path_independence_suite,
    prune_chain,
    random_problem,
    run_local_search,
    sign_test,
    solve_direct,
    stream_rng,
)
from osscar.cli import main as cli_main
from osscar.oracle import write_gap_csv
from osscar.updates import GROW_SIGN, SHRINK_SIGN

from conftest import identity_problem
from test_builders import reference_patches

DATA = Path(__file__).parent / "data"


def report(criterion, ok, detail):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def test_criterion_1_update_direct_equivalence():
    """Incremental objective/inverse/weights track direct re-solves within
    1e-7 relative at every step of 200 randomized operation sequences."""
    start = time.perf_counter()
    result = path_independence_suite(instances=200, seed=0, min_ops=20, tol=1e-7)
    elapsed = time.perf_counter() - start
    ok = result["pass"] and elapsed < 60.0
    report(
        1, ok,
        f"max drift {result['max_drift']:.2e} over {result['steps_checked']} steps "
        f"(tol 1e-07), runtime {elapsed:.1f}s < 60s",
    )


def test_criterion_2_sign_resolution():
    """One sign pair is consistent with direct re-solves on every instance
    at 1e-9, and the engine ships exactly that pair."""
    result = sign_test(instances=50, seed=0)
    ok = (
        result["max_error"] <= 1e-9
        and result["engine_matches"]
        and result["engine_sign_pair"] == (result["case1_sign"], result["case2_sign"])
        and (int(SHRINK_SIGN), int(GROW_SIGN)) == (result["case1_sign"], result["case2_sign"])
    )
    report(
        2, ok,
        f"resolved pair ({result['case1_sign']:+d}, {result['case2_sign']:+d}) "
        f"max error {result['max_error']:.2e} <= 1e-09 on {result['instances']} instances",
    )


def test_criterion_3_selection_direction():
    """The minimizing selection reading beats the literal one on median
    optimality gap and reproduces refit magnitude pruning exactly on
    separable (identity-Hessian) instances."""
    result = direction_test(instances=50, seed=0)
    chosen, rejected = result["selection_direction"], "max_impact"
    gap_ok = (
        chosen == "min_impact"
        and result["median_gap"][chosen] < result["median_gap"][rejected]
    )
    ident_ok = True
    for i in range(10):
        rng = stream_rng(1, f"accept3-{i}")
        problem = identity_problem(rng.uniform(0.5, 4.0, size=8))
        search, _ = run_local_search(problem, make_schedule("nested", 4, t_hat=2))
        baseline = magnitude_prune(problem, 4, refit=True)
        ident_ok &= search.pruned_groups == baseline.pruned_groups
        ident_ok &= abs(search.objective - baseline.objective) <= 1e-12 * abs(baseline.objective)
    report(
        3, gap_ok and ident_ok,
        f"chose {chosen}: median gap {result['median_gap'][chosen]:.2e} vs "
        f"{result['median_gap'][rejected]:.2e}; identity instances match refit "
        f"magnitude baseline exactly",
    )


def test_criterion_4_greedy_equivalence():
    """The (1,1) schedule reproduces an independently coded forward-greedy
    selector on 50 instances with p <= 10."""
    worst = 0.0
    for i in range(50):
        rng = stream_rng(2, f"accept4-{i}")
        p = int(rng.integers(4, 11))
        group_size = int(rng.integers(1, 4))
        problem = random_problem(rng, p=p, group_size=group_size, d2=int(rng.integers(2, 6)))
        p_prime = int(rng.integers(1, p + 1))

        selected = []
        for _ in range(p_prime):
            best = None
            for j in range(p):
                if j in selected:
                    continue
                value, _ = solve_direct(problem, sorted(selected + [j]))
                if best is None or value < best[1] - 1e-15:
                    best = (j, value)
            selected.append(best[0])
        expected_s, expected_f = tuple(sorted(selected)), best[1]

        got, _ = run_local_search(problem, make_schedule("greedy", p_prime))
        assert got.pruned_groups == expected_s, f"instance {i}: {got.pruned_groups} != {expected_s}"
        worst = max(worst, abs(got.objective - expected_f) / (1.0 + abs(expected_f)))
    report(4, worst <= 1e-9, f"50 instances match; worst relative objective gap {worst:.2e} <= 1e-09")


def test_criterion_5_gap_suite(tmp_path):
    """On 100 instances (p=8 groups of 3, p'=4, d2=8): swap-refined search
    never loses to its own growth phase, beats refit magnitude pruning on
    at least 90% of instances, and has strictly lower mean objective."""
    suite = gap_suite(instances=100, seed=0, p=8, group_size=3, d2=8, p_prime=4)
    csv_path = tmp_path / "gap_suite.csv"
    write_gap_csv(suite, csv_path)
    s = suite["summary"]
    ok = (
        s["non_nested_le_nested_count"] == 100
        and s["non_nested_beats_mp_plus_fraction"] >= 0.90
        and s["mean_non_nested"] < s["mean_mp_plus"]
    )
    report(
        5, ok,
        f"swap phase dominated growth on 100/100, beat refit magnitude on "
        f"{s['non_nested_beats_mp_plus_fraction']:.0%} (>=90%), mean objective "
        f"{s['mean_non_nested']:.3f} < {s['mean_mp_plus']:.3f}; CSV at {csv_path}",
    )


def test_criterion_6_monotonicity():
    """Objective is monotone under selection inclusion (exhaustive, p<=6);
    impact scores are never below -1e-10; swap steps never raise the
    objective along any trace."""
    inclusion_ok = True
    for i, (p, gs) in enumerate([(5, 1), (6, 1), (6, 2), (4, 3)]):
        problem = random_problem(stream_rng(3, f"accept6-{i}"), p=p, group_size=gs, d2=3)
        values = {}
        for size in range(p + 1):
            for sel in itertools.combinations(range(p), size):
                values[sel], _ = solve_direct(problem, sel)
        for sel, value in values.items():
            for j in range(p):
                if j not in sel:
                    bigger = tuple(sorted(sel + (j,)))
                    inclusion_ok &= values[bigger] >= value - 1e-9

    score_min = np.inf
    for i in range(25):
        rng = stream_rng(4, f"accept6-score-{i}")
        p = int(rng.integers(4, 10))
        problem = random_problem(rng, p=p, group_size=int(rng.integers(1, 4)), d2=3)
        state = init_state(problem)
        n_pruned = int(rng.integers(1, p))
        state.shrink(rng.choice(p, size=n_pruned, replace=False))
        score_min = min(score_min, min(compute_impacts(state).values()))

    swap_ok = True
    for i in range(20):
        problem = random_problem(stream_rng(5, f"accept6-swap-{i}"), p=10, d2=3)
        schedule = make_schedule("non_nested", 5, t_hat=2, extra_swaps=10)
        rep, _ = run_local_search(problem, schedule)
        growth_steps = sum(1 for _, q in schedule.steps if q > 0)
        tail = [t.objective for t in rep.trace[growth_steps - 1 :]]
        swap_ok &= all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))

    ok = inclusion_ok and score_min >= -1e-10 and swap_ok
    report(
        6, ok,
        f"inclusion monotone (exhaustive p<=6), min impact score {score_min:.2e} "
        f">= -1e-10, swap traces non-increasing on 20/20 runs",
    )


def test_criterion_7_complexity_contracts():
    """Nested-run time grows with exponent in [2, 4] over d1 in {128, 256,
    512}; per-update time is affine in the changed-row count with fit R^2
    >= 0.9; scoring one removal varies < 2x across pruned-set sizes.
    Noisy-neighbor machines get up to three attempts per measurement."""
    start = time.perf_counter()

    exponent = None
    for attempt in range(3):
        result = bench.nested_scaling((128, 256, 512), d2=16, t_hat=8, seed=attempt, reps=2)
        exponent = result["exponent"]
        if 2.0 <= exponent <= 4.0:
            break

    r2 = 0.0
    for attempt in range(3):
        result = bench.update_linearity(512, t_list=(1, 2, 4, 8, 16), seed=attempt,
                                        reps=30, inner=1)
        r2 = max(r2, result["r2"])
        if r2 >= 0.9:
            break

    ratio = np.inf
    for attempt in range(3):
        result = bench.score_invariance(512, group_size=4, seed=attempt)
        ratio = min(ratio, result["max_over_min"])
        if ratio < 2.0:
            break

    elapsed = time.perf_counter() - start
    ok = (2.0 <= exponent <= 4.0) and r2 >= 0.9 and ratio < 2.0 and elapsed < 300.0
    report(
        7, ok,
        f"growth exponent {exponent:.2f} in [2,4], update linearity R^2 {r2:.3f} "
        f">= 0.9, score-time spread {ratio:.2f}x < 2x, bench {elapsed:.0f}s < 300s",
    )


def test_criterion_8_builder_correctness():
    """1x1 convolutions reproduce the dense builder exactly; conv H/G match
    an independent sliding-window extractor to 1e-10; a pruned two-layer
    chain's output matches an independent forward pass to 1e-8; tau=0
    chains change nothing."""
    rng = np.random.default_rng(7)

    spec1 = ConvSpec(c_in=4, c_out=3, k_h=1, k_w=1, f_h=3, f_w=3)
    samples = [rng.standard_normal((4, 3, 3)) for _ in range(5)]
    bank = rng.standard_normal((3, 4, 1, 1))
    conv_problem = build_conv(samples, bank, spec1, damping=0.0)
    x = np.ascontiguousarray(np.vstack([fm.reshape(4, -1).T for fm in samples]))
    dense_problem = build_dense(
        CalibrationBatch.of(x), flatten_filter_bank(bank, spec1), damping=0.0
    )
    one_by_one_ok = (
        np.array_equal(conv_problem.hessian, dense_problem.hessian)
        and np.array_equal(conv_problem.linear, dense_problem.linear)
        and conv_problem.const_term == dense_problem.const_term
    )

    spec2 = ConvSpec(c_in=3, c_out=2, k_h=3, k_w=2, f_h=6, f_w=5, padding=1, stride=2)
    samples2 = [rng.standard_normal((3, 6, 5)) for _ in range(3)]
    bank2 = rng.standard_normal((2, 3, 3, 2))
    problem2 = build_conv(samples2, bank2, spec2, damping=0.0)
    w_mat = flatten_filter_bank(bank2, spec2)
    h_ref = np.zeros((spec2.patch_len, spec2.patch_len))
    g_ref = np.zeros((spec2.patch_len, spec2.c_out))
    for fm in samples2:
        patches = reference_patches(fm, spec2)
        h_ref += patches.T @ patches
        g_ref += patches.T @ (patches @ w_mat)
    conv_err = max(
        np.max(np.abs(problem2.hessian - h_ref)), np.max(np.abs(problem2.linear - g_ref))
    )

    x = rng.standard_normal((30, 8))
    layers = [
        ChainLayer(kind="dense", weights=rng.standard_normal((8, 8)), tau=0.5),
        ChainLayer(kind="dense", weights=rng.standard_normal((8, 4)), tau=0.5),
    ]
    result = prune_chain(layers, x, t_hat=2)
    manual = x @ result.layers[0].weights @ result.layers[1].weights
    chain_err = np.max(np.abs(np.asarray(result.pruned_output) - manual))

    frozen = [
        ChainLayer(kind="dense", weights=rng.standard_normal((6, 6)), tau=0.0, activation="relu"),
        ChainLayer(kind="dense", weights=rng.standard_normal((6, 3)), tau=0.0),
    ]
    x2 = rng.standard_normal((15, 6))
    frozen_result = prune_chain(frozen, x2, damping=0.0)
    noop_dev = max(
        np.max(np.abs(np.asarray(frozen_result.pruned_output) - np.asarray(frozen_result.dense_output))),
        max(np.max(np.abs(pl.weights - layer.weights))
            for pl, layer in zip(frozen_result.layers, frozen)),
    )
    noop_loss = max(pl.report.reconstruction_loss for pl in frozen_result.layers)

    ok = (
        one_by_one_ok and conv_err < 1e-10 and chain_err < 1e-8
        and noop_dev < 1e-8 and abs(noop_loss) < 1e-8
    )
    report(
        8, ok,
        f"1x1-conv == dense exactly: {one_by_one_ok}; conv vs reference extractor "
        f"{conv_err:.2e} < 1e-10; chain vs independent forward {chain_err:.2e} < 1e-08; "
        f"tau=0 deviation {noop_dev:.2e}, loss {noop_loss:.2e}",
    )


def test_criterion_9_schedule_presets():
    """Presets expand to the exact published step lists."""
    conv_style = make_schedule("nested", 6, t_hat=2)
    ffn_style = make_schedule("nested", 30, t_hat=10)
    swap_style = make_schedule("non_nested", 4, t_hat=2)
    ok = (
        conv_style.steps == ((2, 2), (2, 2), (2, 2))
        and ffn_style.steps == ((10, 10), (10, 10), (10, 10))
        and swap_style.steps[:2] == ((2, 2), (2, 2))
        and swap_style.steps[2:] == tuple((2, 0) for _ in range(30))
    )
    report(
        9, ok,
        "nested t=2 -> (2,2) x p'/2; nested t=10 -> (10,10) x p'/10; "
        "non_nested appends exactly 30 (t,0) steps by default",
    )


def test_criterion_10_cli_determinism(tmp_path):
    """Identical configuration reproduces byte-identical reports with
    timing suppressed, and the bundled example matches its golden files."""
    args = [
        "prune", "--problem", str(DATA / "example_problem"), "--prune-count", "2",
        "--schedule", "non_nested:t=2:swaps=4", "--no-timing",
    ]
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli_main(args + ["--out", str(out_a)]) == 0
    assert cli_main(args + ["--out", str(out_b)]) == 0
    repeat_ok = (
        out_a.read_bytes() == out_b.read_bytes()
        and (tmp_path / "a.weights.bin").read_bytes() == (tmp_path / "b.weights.bin").read_bytes()
    )
    golden_ok = (
        out_a.read_bytes() == (DATA / "golden_report.json").read_bytes()
        and (tmp_path / "a.weights.bin").read_bytes()
        == (DATA / "golden_report.weights.bin").read_bytes()
    )
    golden = json.loads((DATA / "golden_report.json").read_text())
    from osscar import load_problem

    oracle = brute_force(load_problem(DATA / "example_problem"), 2)
    oracle_ok = tuple(golden["report"]["pruned_groups"]) == oracle.best_selection
    ok = repeat_ok and golden_ok and oracle_ok
    report(
        10, ok,
        f"repeat runs byte-identical: {repeat_ok}; golden files match: {golden_ok}; "
        f"golden selection equals enumerated optimum {oracle.best_selection}",
    )
