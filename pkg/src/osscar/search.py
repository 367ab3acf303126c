"""Schedule-driven local search over pruned-group subsets.

Each schedule step (t_i, p_i) bounds the symmetric difference between
consecutive pruned sets by t_i while requiring the set to grow by p_i.
With t_i == p_i the search degenerates to batched greedy growth (pruned
sets are nested); steps with p_i == 0 are cardinality-preserving swaps
that are only accepted when they strictly improve the objective.

Candidate moves are ranked by impact scores: for an unpruned group, the
objective increase if it were pruned; for a pruned group, the decrease if
it were restored.  The selection direction is configurable because the
two obvious readings of the ranking differ; the oracle module resolves
which one actually minimizes the objective ("min_impact": prune the
cheapest groups, evict the costliest) and the report records the choice.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import thread_budget
from .errors import ScheduleError, SingularBlockError
from .problem import QuadraticProblem, objective_at, solve_direct
from .updates import DEFAULT_REBUILD_EVERY, PruneState, init_state

SWAP_ACCEPT_TOL = 1e-12
DEFAULT_EXTRA_SWAPS = 30

# Selection directions: "min_impact" prunes the lowest-impact candidates and
# evicts the highest-impact members; "max_impact" is the opposite reading.
DIRECTIONS = ("min_impact", "max_impact")

# Scoring loops only go parallel when there is enough work per candidate to
# amortize thread handoff; correctness never depends on this.
_PARALLEL_MIN_CANDIDATES = 8
_PARALLEL_MIN_DIM = 192


@dataclass(frozen=True)
class SearchSchedule:
    """Ordered (t_i, p_i) step list; sum of p_i is the total prune count."""

    steps: tuple[tuple[int, int], ...]

    def __post_init__(self):
        norm = []
        for i, (t, p) in enumerate(self.steps):
            t, p = int(t), int(p)
            if t < 1:
                raise ScheduleError(f"step {i}: t must be >= 1, got {t}")
            if p < 0 or p > t:
                raise ScheduleError(f"step {i}: need 0 <= p <= t, got p={p}, t={t}")
            norm.append((t, p))
        object.__setattr__(self, "steps", tuple(norm))

    @property
    def total_pruned(self) -> int:
        return sum(p for _, p in self.steps)

    def to_json_list(self) -> list[list[int]]:
        return [[t, p] for t, p in self.steps]


def make_schedule(preset: str, p_prime: int, t_hat: int = 2,
                  extra_swaps: int = DEFAULT_EXTRA_SWAPS,
                  steps=None) -> SearchSchedule:
    """Build a schedule from a named preset.

    nested      ceil(p'/t) steps of (t, t), last step trimmed to hit p'
    non_nested  the nested steps followed by extra_swaps steps of (t, 0)
    greedy      p' steps of (1, 1)
    custom      explicit steps
    """
    if p_prime < 0:
        raise ScheduleError("prune count must be nonnegative")
    if preset == "custom":
        if steps is None:
            raise ScheduleError("custom schedule requires explicit steps")
        return SearchSchedule(tuple(tuple(s) for s in steps))
    if t_hat < 1:
        raise ScheduleError("t_hat must be >= 1")
    if preset == "greedy":
        return SearchSchedule(tuple((1, 1) for _ in range(p_prime)))
    if preset in ("nested", "non_nested"):
        steps_out = []
        remaining = p_prime
        while remaining > 0:
            grow = min(t_hat, remaining)
            steps_out.append((t_hat, grow))
            remaining -= grow
        if preset == "non_nested":
            steps_out.extend((t_hat, 0) for _ in range(extra_swaps))
        return SearchSchedule(tuple(steps_out))
    raise ScheduleError(f"unknown schedule preset {preset!r}")


def _score_many(fn, candidates):
    budget = thread_budget()
    if (budget > 1 and len(candidates) >= _PARALLEL_MIN_CANDIDATES):
        with ThreadPoolExecutor(max_workers=budget) as pool:
            values = list(pool.map(fn, candidates))
        return dict(zip(candidates, values))
    return {j: fn(j) for j in candidates}


def _outside_groups(state: PruneState) -> np.ndarray:
    mask = np.ones(state.problem.p, dtype=bool)
    mask[state.pruned] = False
    return np.flatnonzero(mask)


def _removal_scores(state: PruneState, outside: np.ndarray) -> np.ndarray:
    partition = state.problem.partition
    if partition.group_size == 1:
        # Singleton groups: every corner block is a scalar on the diagonal
        # of the inverse, so the whole side vectorizes.
        idx = state.position[outside.astype(np.int64)]
        diag = state.inv[idx, idx]
        if np.any(diag <= 0.0):
            raise SingularBlockError("nonpositive diagonal in retained inverse")
        w2 = np.sum(state.weights[idx] ** 2, axis=1)
        return 0.5 * w2 / diag
    candidates = [int(j) for j in outside]
    if len(candidates) and state.retained.size >= _PARALLEL_MIN_DIM:
        scored = _score_many(state.score_removal, candidates)
        return np.array([scored[j] for j in candidates])
    return np.array([state.score_removal(j) for j in candidates])


def _restoration_scores(state: PruneState, inside: np.ndarray) -> np.ndarray:
    candidates = [int(j) for j in inside]
    if len(candidates) and state.retained.size >= _PARALLEL_MIN_DIM:
        scored = _score_many(state.score_restoration, candidates)
        return np.array([scored[j] for j in candidates])
    return np.array([state.score_restoration(j) for j in candidates])


def compute_impacts(state: PruneState, candidates_in: bool = True,
                    candidates_out: bool = True) -> dict[int, float]:
    """Impact score per group index.

    Pruned groups score their restoration gain, unpruned groups their
    removal cost.  Either side can be skipped; pure-growth schedules only
    ever need the unpruned side, which is the cheap one.
    """
    scores: dict[int, float] = {}
    if candidates_out:
        outside = _outside_groups(state)
        scores.update(zip(outside.tolist(), _removal_scores(state, outside).tolist()))
    if candidates_in:
        inside = state.pruned
        scores.update(zip(inside.tolist(), _restoration_scores(state, inside).tolist()))
    return scores


def _take(candidates: np.ndarray, values: np.ndarray, count: int, largest: bool) -> np.ndarray:
    """Top/bottom `count` candidates by value; ties go to the lower index."""
    if count == 0:
        return np.empty(0, dtype=np.int64)
    keys = -values if largest else values
    order = np.argsort(keys, kind="stable")  # candidates ascend, so ties stay low
    return candidates[order[:count]]


def local_step(state: PruneState, t_hat: int, p_hat: int,
               direction: str = "min_impact") -> PruneState:
    """One schedule step: rank candidates, apply the bounded exchange.

    The step exchanges s1 pruned for s2 unpruned groups with s2 - s1 ==
    p_hat and s1 + s2 <= t_hat; both counts clamp down when the pruned set
    or its complement is too small.  Pure swap steps (p_hat == 0) keep the
    candidate only on strict objective improvement.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown selection direction {direction!r}")
    if p_hat > t_hat:
        raise ScheduleError(f"step requires p <= t, got p={p_hat}, t={t_hat}")
    p = state.problem.p
    n_pruned = state.pruned_count
    if n_pruned + p_hat > p:
        raise ScheduleError(
            f"cannot prune {p_hat} more groups: {n_pruned} of {p} already pruned"
        )
    s1 = min((t_hat - p_hat) // 2, n_pruned)
    s2 = min((t_hat + p_hat) // 2, p - n_pruned)
    # Re-clamp the unconstrained side so the net growth stays exactly p_hat.
    if s2 - s1 > p_hat:
        s2 = s1 + p_hat
    elif s2 - s1 < p_hat:
        s1 = s2 - p_hat
    if s2 == 0:
        return state

    outside = _outside_groups(state)
    out_scores = _removal_scores(state, outside)
    inside = state.pruned
    in_scores = _restoration_scores(state, inside) if s1 > 0 else np.empty(0)
    if direction == "min_impact":
        into_pruned = _take(outside, out_scores, s2, largest=False)
        out_of_pruned = _take(inside, in_scores, s1, largest=True)
    else:
        into_pruned = _take(outside, out_scores, s2, largest=True)
        out_of_pruned = _take(inside, in_scores, s1, largest=False)

    if p_hat == 0:
        snapshot = state.copy()
        state.swap(restore=out_of_pruned, prune=into_pruned)
        if state.objective < snapshot.objective - SWAP_ACCEPT_TOL:
            return state
        return snapshot
    if s1:
        state.swap(restore=out_of_pruned, prune=into_pruned)
    else:
        state.shrink(into_pruned)
    return state


@dataclass
class TraceEntry:
    step: int
    pruned_count: int
    objective: float
    wall_ms: float | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {"step": self.step, "pruned": self.pruned_count, "objective": self.objective}
        if include_timing and self.wall_ms is not None:
            out["wall_ms"] = self.wall_ms
        return out


@dataclass
class PruneReport:
    """Solver output: final selection, objective, loss, per-step trace."""

    pruned_groups: tuple[int, ...]
    objective: float
    reconstruction_loss: float
    method: str
    direction: str | None = None
    schedule: tuple[tuple[int, int], ...] | None = None
    trace: list[TraceEntry] = field(default_factory=list)
    total_ms: float | None = None
    speedup: float | None = None
    normalized_loss: float | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "pruned_groups": list(self.pruned_groups),
            "objective": self.objective,
            "reconstruction_loss": self.reconstruction_loss,
            "method": self.method,
            "direction": self.direction,
            "schedule": [list(s) for s in self.schedule] if self.schedule is not None else None,
            "trace": [t.to_dict(include_timing) for t in self.trace],
            "speedup": self.speedup,
            "normalized_loss": self.normalized_loss,
        }
        if include_timing:
            out["total_ms"] = self.total_ms
        return out


def _finish_report(problem, state_or_sel, objective, method, direction=None,
                   schedule=None, trace=None, total_ms=None) -> PruneReport:
    selection = tuple(int(j) for j in np.asarray(state_or_sel).reshape(-1))
    p = problem.p
    kept = p - len(selection)
    loss = objective + problem.const_term
    return PruneReport(
        pruned_groups=selection,
        objective=objective,
        reconstruction_loss=loss,
        method=method,
        direction=direction,
        schedule=tuple(schedule.steps) if schedule is not None else None,
        trace=trace or [],
        total_ms=total_ms,
        speedup=(p / kept) if kept else float("inf"),
        normalized_loss=(loss / problem.sample_count) if problem.sample_count else None,
    )


def run_local_search(problem: QuadraticProblem, schedule: SearchSchedule,
                     direction: str = "min_impact",
                     rebuild_every: int | None = DEFAULT_REBUILD_EVERY,
                     method: str = "local_search",
                     keep_timing: bool = True) -> tuple[PruneReport, PruneState]:
    """Run the full schedule from the dense state.

    Returns the report and the final state (whose weights are the refit
    retained rows).  The number of groups pruned equals the schedule's
    total exactly.
    """
    if schedule.total_pruned > problem.p:
        raise ScheduleError(
            f"schedule prunes {schedule.total_pruned} groups but instance has {problem.p}"
        )
    start = time.perf_counter()
    state = init_state(problem, rebuild_every=rebuild_every)
    trace: list[TraceEntry] = []
    for i, (t_hat, p_hat) in enumerate(schedule.steps, start=1):
        t0 = time.perf_counter()
        state = local_step(state, t_hat, p_hat, direction=direction)
        wall = (time.perf_counter() - t0) * 1e3 if keep_timing else None
        trace.append(TraceEntry(i, state.pruned_count, state.objective, wall))
    total_ms = (time.perf_counter() - start) * 1e3 if keep_timing else None
    report = _finish_report(
        problem, state.pruned, state.objective, method,
        direction=direction, schedule=schedule, trace=trace, total_ms=total_ms,
    )
    return report, state


def magnitude_prune(problem: QuadraticProblem, p_prime: int,
                    refit: bool = False) -> PruneReport:
    """Baseline: prune the groups whose dense-solution rows have the
    smallest Frobenius norm; optionally refit the survivors optimally.

    The dense weights are recovered as the unpruned optimum of the
    instance, so the baseline needs nothing beyond the instance itself.
    """
    if not 0 <= p_prime <= problem.p:
        raise ScheduleError(f"prune count {p_prime} outside [0, {problem.p}]")
    start = time.perf_counter()
    _, dense_w = solve_direct(problem, ())
    norms = np.array([
        np.linalg.norm(dense_w[g]) for g in problem.partition.groups
    ])
    order = np.argsort(norms, kind="stable")  # stable: ties keep lower index
    selection = np.sort(order[:p_prime])
    if refit:
        objective, _ = solve_direct(problem, selection)
        method = "mp_plus"
    else:
        truncated = dense_w.copy()
        rows = problem.partition.rows_of(selection)
        truncated[rows] = 0.0
        objective = objective_at(problem, truncated)
        method = "mp"
    total_ms = (time.perf_counter() - start) * 1e3
    return _finish_report(problem, selection, objective, method, total_ms=total_ms)
