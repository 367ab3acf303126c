"""Command-line interface.

Four subcommands: ``prune`` solves one problem bundle, ``chain`` prunes a
sequential layer chain, ``verify`` runs the oracle resolution suites, and
``bench`` measures the scaling contracts.  Reports are JSON with sorted
keys; identical configuration, seed and thread budget reproduce reports
byte for byte once timing fields are suppressed with --no-timing.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__, bench, oracle
from .builders import load_chain, prune_chain, prune_count_for
from .config import set_thread_budget
from .errors import (
    InconsistentSignsError,
    NotPositiveDefiniteError,
    NumericalDriftError,
    OsscarError,
    SingularBlockError,
    TooManySubsetsError,
)
from .matrixio import write_matrix_binary
from .problem import expand_weights, load_problem
from .search import DEFAULT_EXTRA_SWAPS, SearchSchedule, make_schedule, run_local_search

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4


def _emit_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_schedule_arg(arg: str | None, p_prime: int, kind: str) -> tuple[SearchSchedule, str]:
    """Accept a JSON schedule file or a preset string like ``nested:t=2``."""
    default_t = 2 if kind in ("conv", "attention") else 10
    if arg is None:
        return make_schedule("nested", p_prime, t_hat=default_t), "nested"
    path = Path(arg)
    if path.exists():
        with open(path) as fh:
            desc = json.load(fh)
        if "steps" in desc:
            return SearchSchedule(tuple(tuple(s) for s in desc["steps"])), "custom"
        preset = desc["preset"]
        return make_schedule(
            preset, p_prime,
            t_hat=int(desc.get("t_hat", default_t)),
            extra_swaps=int(desc.get("extra_swaps", DEFAULT_EXTRA_SWAPS)),
        ), preset
    parts = arg.split(":")
    preset = parts[0]
    t_hat = default_t
    extra_swaps = DEFAULT_EXTRA_SWAPS
    for part in parts[1:]:
        key, _, value = part.partition("=")
        if key in ("t", "t_hat"):
            t_hat = int(value)
        elif key in ("swaps", "extra_swaps"):
            extra_swaps = int(value)
        else:
            raise ValueError(f"unknown schedule option {part!r}")
    return make_schedule(preset, p_prime, t_hat=t_hat, extra_swaps=extra_swaps), preset


def _resolve_prune_count(args, p: int) -> int:
    if (args.prune_count is None) == (args.tau is None):
        raise ValueError("specify exactly one of --prune-count and --tau")
    if args.prune_count is not None:
        p_prime = args.prune_count
    else:
        p_prime = prune_count_for(args.tau, p)
    if not 0 <= p_prime <= p:
        raise ValueError(f"prune count {p_prime} outside [0, {p}]")
    return p_prime


def cmd_prune(args) -> int:
    problem = load_problem(args.problem, damping=args.damping)
    p_prime = _resolve_prune_count(args, problem.p)
    schedule, method = _parse_schedule_arg(args.schedule, p_prime, problem.partition.kind)
    report, state = run_local_search(
        problem, schedule, method=method, keep_timing=not args.no_timing,
    )
    payload = {
        "command": "prune",
        "version": __version__,
        "seed": args.seed,
        "threads": args.threads,
        "problem": {
            "d1": problem.d1,
            "d2": problem.d2,
            "p": problem.p,
            "kind": problem.partition.kind,
            "const_term": problem.const_term,
        },
        "config": {
            "prune_count": p_prime,
            "tau": args.tau,
            "damping": args.damping,
            "schedule_arg": args.schedule,
        },
        "report": report.to_dict(include_timing=not args.no_timing),
    }
    _emit_json(payload, args.out)
    if args.out:
        weights = expand_weights(problem, state.pruned, state.weights)
        write_matrix_binary(Path(args.out).with_suffix(".weights.bin"), weights)
    return EXIT_OK


def _parse_chain_schedule(arg: str | None) -> tuple[str, int | None, int]:
    """Chains re-derive each layer's prune count, so only preset-style
    schedules apply; explicit step lists are rejected."""
    if arg is None:
        return "nested", None, DEFAULT_EXTRA_SWAPS
    path = Path(arg)
    if path.exists():
        with open(path) as fh:
            desc = json.load(fh)
        if "steps" in desc:
            raise ValueError("explicit step lists cannot apply across chain layers")
        return (
            desc["preset"],
            desc.get("t_hat"),
            int(desc.get("extra_swaps", DEFAULT_EXTRA_SWAPS)),
        )
    parts = arg.split(":")
    preset, t_hat, extra_swaps = parts[0], None, DEFAULT_EXTRA_SWAPS
    for part in parts[1:]:
        key, _, value = part.partition("=")
        if key in ("t", "t_hat"):
            t_hat = int(value)
        elif key in ("swaps", "extra_swaps"):
            extra_swaps = int(value)
        else:
            raise ValueError(f"unknown schedule option {part!r}")
    return preset, t_hat, extra_swaps


def cmd_chain(args) -> int:
    layers, calibration = load_chain(args.chain)
    preset, t_hat, extra_swaps = _parse_chain_schedule(args.schedule)
    if args.t_hat is not None:
        t_hat = args.t_hat
    result = prune_chain(
        layers, calibration,
        preset=preset,
        t_hat=t_hat,
        extra_swaps=extra_swaps,
        damping=args.damping if args.damping is not None else 1e-4,
        keep_timing=not args.no_timing,
    )
    payload = {
        "command": "chain",
        "version": __version__,
        "seed": args.seed,
        "threads": args.threads,
        "layers": [
            pl.report.to_dict(include_timing=not args.no_timing) for pl in result.layers
        ],
    }
    _emit_json(payload, args.out)
    if args.out:
        stem = Path(args.out)
        for i, pl in enumerate(result.layers):
            write_matrix_binary(stem.with_suffix(f".layer{i}.weights.bin"), pl.weights)
    return EXIT_OK


def cmd_verify(args) -> int:
    quick = args.quick
    n_sign = 20 if quick else 50
    n_direction = 12 if quick else 50
    n_path = 25 if quick else 200
    n_gap = 15 if quick else 100

    suites = []

    signs = oracle.sign_test(instances=n_sign, seed=args.seed)
    sign_pass = (
        signs["engine_matches"]
        and signs["engine_sign_pair"] == (signs["case1_sign"], signs["case2_sign"])
    )
    suites.append({"name": "sign_resolution", "pass": sign_pass, **signs})

    direction = oracle.direction_test(instances=n_direction, seed=args.seed)
    direction_pass = (
        direction["selection_direction"] == "min_impact"
        and direction["median_gap"]["min_impact"] <= direction["median_gap"]["max_impact"]
    )
    suites.append({
        "name": "direction_resolution",
        "pass": direction_pass,
        "selection_direction": direction["selection_direction"],
        "median_gap": direction["median_gap"],
        "mean_objective": direction["mean_objective"],
    })

    path_suite = oracle.path_independence_suite(instances=n_path, seed=args.seed)
    suites.append({"name": "path_independence", **path_suite})

    gaps = oracle.gap_suite(instances=n_gap, seed=args.seed)
    summary = gaps["summary"]
    gap_pass = (
        summary["non_nested_le_nested_count"] == n_gap
        and summary["non_nested_beats_mp_plus_fraction"] >= 0.9
        and summary["mean_non_nested"] < summary["mean_mp_plus"]
    )
    suites.append({"name": "gap_suite", "pass": gap_pass, "instances": n_gap, **summary})
    if args.out:
        oracle.write_gap_csv(gaps, Path(args.out).with_suffix(".gaps.csv"))

    all_pass = all(s["pass"] for s in suites)
    payload = {
        "command": "verify",
        "version": __version__,
        "seed": args.seed,
        "quick": quick,
        "case1_sign": signs["case1_sign"],
        "case2_sign": signs["case2_sign"],
        "engine_sign_pair": list(signs["engine_sign_pair"]),
        "selection_direction": direction["selection_direction"],
        "suites": suites,
        "pass": all_pass,
    }
    _emit_json(payload, args.out)
    return EXIT_OK if all_pass else EXIT_VERIFY


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if args.quick:
        sizes = [s for s in sizes if s <= 256] or sizes[:2]
    nested = bench.nested_scaling(sizes, d2=args.d2, t_hat=args.t_hat, seed=args.seed)
    updates = bench.update_linearity(d1=max(sizes), d2=args.d2, seed=args.seed)
    scores = bench.score_invariance(d1=max(sizes), d2=args.d2, seed=args.seed)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["d1", "d2", "t_hat", "total_ms", "per_update_ms"]
            )
            writer.writeheader()
            writer.writerows(nested["rows"])
    summary = {
        "command": "bench",
        "version": __version__,
        "sizes": sizes,
        "growth_exponent": nested["exponent"],
        "update_fit_r2": updates["r2"],
        "update_slope_ms_per_row": updates["slope_ms_per_row"],
        "score_time_max_over_min": scores["max_over_min"],
        "csv": args.out,
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osscar",
        description="One-shot structured pruning via combinatorial local search",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--no-timing", action="store_true")
        p.add_argument("--quick", action="store_true")

    p_prune = sub.add_parser("prune", help="prune a problem bundle")
    p_prune.add_argument("--problem", required=True, help="bundle directory")
    p_prune.add_argument("--schedule", default=None,
                         help="JSON file or preset string, e.g. nested:t=2")
    p_prune.add_argument("--prune-count", type=int, default=None)
    p_prune.add_argument("--tau", type=float, default=None)
    p_prune.add_argument("--damping", type=float, default=None,
                         help="relative ridge added at load (default: bundle meta, else 1e-4)")
    common(p_prune)
    p_prune.set_defaults(func=cmd_prune)

    p_chain = sub.add_parser("chain", help="prune a sequential layer chain")
    p_chain.add_argument("--chain", required=True, help="chain description JSON")
    p_chain.add_argument("--schedule", default=None,
                         help="JSON preset file or preset string, e.g. non_nested:t=2")
    p_chain.add_argument("--t-hat", type=int, default=None)
    p_chain.add_argument("--damping", type=float, default=None)
    common(p_chain)
    p_chain.set_defaults(func=cmd_chain)

    p_verify = sub.add_parser("verify", help="run oracle resolution suites")
    common(p_verify)
    p_verify.set_defaults(func=cmd_verify)

    p_bench = sub.add_parser("bench", help="measure scaling contracts")
    p_bench.add_argument("--sizes", default="128,256,512")
    p_bench.add_argument("--d2", type=int, default=16)
    p_bench.add_argument("--t-hat", type=int, default=2)
    common(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        set_thread_budget(args.threads)
    try:
        return args.func(args)
    except InconsistentSignsError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (NotPositiveDefiniteError, SingularBlockError, NumericalDriftError,
            TooManySubsetsError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (OsscarError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
