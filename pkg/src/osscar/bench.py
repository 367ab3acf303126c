"""Wall-time scaling measurements for the incremental solver.

Three contracts worth checking on real hardware: total nested-search time
grows polynomially (between quadratic and quartic) in the row count; a
single incremental update is affine in the number of changed rows; and
scoring one removal candidate costs the same no matter how much has been
pruned already.  All measurements take the minimum over repetitions to
shave scheduler noise.
"""

from __future__ import annotations

import time

import numpy as np
from threadpoolctl import threadpool_limits

from .oracle import random_problem, stream_rng
from .search import make_schedule, run_local_search
from .updates import init_state


def _fit_loglog(xs, ys) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def _fit_linear(xs, ys) -> tuple[float, float, float]:
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def nested_scaling(d1_list=(128, 256, 512), d2: int = 16, t_hat: int = 8,
                   prune_fraction: float = 0.5, seed: int = 0, reps: int = 2) -> dict:
    """Time full nested runs across row counts; fit the growth exponent.

    BLAS threads are pinned to one so the fit reflects the arithmetic
    rather than the thread pool's size-dependent efficiency.
    """
    rows = []
    with threadpool_limits(1):
        for d1 in d1_list:
            rng = stream_rng(seed, f"bench-nested-{d1}")
            problem = random_problem(rng, p=d1, group_size=1, d2=d2)
            p_prime = int(prune_fraction * d1)
            schedule = make_schedule("nested", p_prime, t_hat=t_hat)
            best = float("inf")
            per_update = float("inf")
            for _ in range(reps):
                t0 = time.perf_counter()
                run_local_search(problem, schedule, rebuild_every=None, keep_timing=False)
                elapsed = time.perf_counter() - t0
                best = min(best, elapsed)
                per_update = min(per_update, elapsed / max(len(schedule.steps), 1))
            rows.append({
                "d1": d1, "d2": d2, "t_hat": t_hat,
                "total_ms": best * 1e3, "per_update_ms": per_update * 1e3,
            })
    exponent = None
    if len(rows) >= 2:
        exponent = _fit_loglog([r["d1"] for r in rows], [r["total_ms"] for r in rows])
    return {"rows": rows, "exponent": exponent}


def update_linearity(d1: int = 512, t_list=(1, 2, 4, 8, 16), d2: int = 4096,
                     seed: int = 0, reps: int = 15, inner: int = 2) -> dict:
    """Per-update wall time against the number of changed rows.

    Each sample loops ``inner`` shrink/grow round trips of the same t rows,
    so the state size is identical at every point and setup stays outside
    the clock.  Samples for the different t values are interleaved round
    robin and the minimum per t is kept, which keeps bursty machine noise
    from correlating with t.
    """
    rng = stream_rng(seed, f"bench-update-{d1}")
    problem = random_problem(rng, p=d1, group_size=1, d2=d2)
    base = init_state(problem, rebuild_every=None)
    best = {t: float("inf") for t in t_list}
    order = list(t_list)
    with threadpool_limits(1):
        warm = base.copy()
        warm.shrink(list(range(max(t_list)))).grow(list(range(max(t_list))))
        for _ in range(reps):
            # Shuffled rotation: periodic machine noise must not alias onto
            # one particular t slot.
            rng.shuffle(order)
            for t in order:
                groups = list(range(t))
                state = base.copy()
                t0 = time.perf_counter()
                for _ in range(inner):
                    state.shrink(groups)
                    state.grow(groups)
                elapsed = (time.perf_counter() - t0) / (2 * inner)
                best[t] = min(best[t], elapsed)
    times = [best[t] * 1e3 for t in t_list]
    slope, intercept, r2 = _fit_linear(t_list, times)
    return {
        "d1": d1,
        "t_list": list(t_list),
        "times_ms": times,
        "slope_ms_per_row": slope,
        "intercept_ms": intercept,
        "r2": r2,
    }


def score_invariance(d1: int = 512, group_size: int = 4, d2: int = 16,
                     pruned_counts=None, seed: int = 0,
                     reps: int = 20) -> dict:
    """Time scoring one removal candidate at several pruned-set sizes; the
    corner-block read makes the cost independent of what remains."""
    rng = stream_rng(seed, f"bench-score-{d1}")
    p = d1 // group_size
    if pruned_counts is None:
        pruned_counts = (0, p // 4, p // 2, 3 * p // 4)
    problem = random_problem(rng, p=p, group_size=group_size, d2=d2)
    state = init_state(problem, rebuild_every=None)
    times = {}
    pruned_so_far = 0
    with threadpool_limits(1):
        for count in sorted(pruned_counts):
            if count > pruned_so_far:
                state.shrink(range(pruned_so_far, count))
                pruned_so_far = count
            candidate = p - 1  # never pruned by the ladder above
            best = float("inf")
            for _ in range(reps):
                t0 = time.perf_counter()
                state.score_removal(candidate)
                best = min(best, time.perf_counter() - t0)
            times[count] = best * 1e3
    values = list(times.values())
    ratio = max(values) / min(values) if min(values) > 0 else float("inf")
    return {"times_ms": times, "max_over_min": ratio}
