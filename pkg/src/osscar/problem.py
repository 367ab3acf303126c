"""Grouped pruning instances and their direct (non-incremental) solver.

An instance is a triple (H, G, partition) plus an additive constant.  The
objective minimized over the retained weights is

    L(W) = 1/2 Tr(W' H W) - Tr(G' W),

and ``objective(S)`` below is the minimum of L over weight matrices whose
rows inside the pruned groups S are forced to zero.  The constant term
turns that (negative) optimum back into the nonnegative reconstruction
error of the layer the instance was built from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matrixio
from .errors import GroupIndexError, ShapeMismatchError
from .linalg import as_matrix, as_sym_matrix, damp, extract_block, spd_factor, spd_solve_factored

PARTITION_KINDS = ("dense", "conv", "attention", "custom")


def as_index_set(values, upper: int, name: str = "index set") -> np.ndarray:
    """Sorted, duplicate-free int64 indices, all inside [0, upper)."""
    idx = np.unique(np.asarray(values, dtype=np.int64).reshape(-1))
    if idx.size and (idx[0] < 0 or idx[-1] >= upper):
        raise GroupIndexError(f"{name}: indices must lie in [0, {upper})")
    return idx


@dataclass(frozen=True, eq=False)
class GroupPartition:
    """Disjoint row groups covering all d1 weight-matrix rows.

    The kind tag records provenance: dense partitions are all singletons,
    conv and attention partitions are equal-size contiguous runs (one per
    input channel / attention head).
    """

    d1: int
    groups: tuple[np.ndarray, ...]
    kind: str = "custom"

    def __post_init__(self):
        if self.kind not in PARTITION_KINDS:
            raise ValueError(f"unknown partition kind {self.kind!r}")
        norm = []
        seen = np.zeros(self.d1, dtype=bool)
        for g in self.groups:
            g = as_index_set(g, self.d1, "group")
            if g.size == 0:
                raise ValueError("empty group in partition")
            if np.any(seen[g]):
                raise ValueError("groups overlap")
            seen[g] = True
            norm.append(g)
        if not np.all(seen):
            raise ValueError("groups do not cover all rows")
        if self.kind == "dense" and any(g.size != 1 for g in norm):
            raise ValueError("dense partition requires singleton groups")
        if self.kind in ("conv", "attention"):
            sizes = {g.size for g in norm}
            if len(sizes) != 1:
                raise ValueError(f"{self.kind} partition requires equal group sizes")
            for g in norm:
                if g[-1] - g[0] != g.size - 1:
                    raise ValueError(f"{self.kind} partition requires contiguous groups")
        object.__setattr__(self, "groups", tuple(norm))

    @classmethod
    def dense(cls, d1: int) -> "GroupPartition":
        return cls(d1, tuple(np.array([i]) for i in range(d1)), "dense")

    @classmethod
    def contiguous(cls, d1: int, group_size: int, kind: str) -> "GroupPartition":
        if group_size < 1 or d1 % group_size:
            raise ValueError(f"d1={d1} is not divisible by group size {group_size}")
        groups = tuple(
            np.arange(j * group_size, (j + 1) * group_size) for j in range(d1 // group_size)
        )
        return cls(d1, groups, kind)

    @property
    def p(self) -> int:
        return len(self.groups)

    @property
    def group_size(self) -> int | None:
        """Uniform group size, or None when groups vary."""
        sizes = {g.size for g in self.groups}
        return sizes.pop() if len(sizes) == 1 else None

    def rows_of(self, group_indices) -> np.ndarray:
        """Sorted union of the rows belonging to the given groups."""
        sel = as_index_set(group_indices, self.p, "group selection")
        if sel.size == 0:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([self.groups[j] for j in sel]))

    def to_json_dict(self) -> dict:
        gs = self.group_size
        if self.kind != "custom" and gs is not None and all(
            g[0] == j * gs and g[-1] == (j + 1) * gs - 1 for j, g in enumerate(self.groups)
        ):
            return {"d1": self.d1, "kind": self.kind, "group_size": gs}
        return {"d1": self.d1, "kind": self.kind, "groups": [g.tolist() for g in self.groups]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "GroupPartition":
        if "groups" in data:
            groups = tuple(np.asarray(g, dtype=np.int64) for g in data["groups"])
            d1 = data.get("d1", int(max(g.max() for g in groups)) + 1 if groups else 0)
            kind = data.get("kind")
            if kind is None:
                kind = _infer_kind(groups)
            return cls(d1, groups, kind)
        d1 = data["d1"]
        kind = data.get("kind", "dense")
        if kind == "dense":
            return cls.dense(d1)
        return cls.contiguous(d1, data["group_size"], kind)


def _infer_kind(groups) -> str:
    if all(len(g) == 1 for g in groups):
        return "dense"
    sizes = {len(g) for g in groups}
    if len(sizes) == 1:
        size = sizes.pop()
        if all(g[-1] - g[0] == size - 1 for g in groups):
            return "conv"
    return "custom"


@dataclass(frozen=True, eq=False)
class QuadraticProblem:
    """One layer's pruning instance: Hessian, linear term, row partition."""

    hessian: np.ndarray
    linear: np.ndarray
    partition: GroupPartition
    const_term: float = 0.0
    sample_count: int | None = field(default=None, compare=False)

    def __post_init__(self):
        h = as_sym_matrix(self.hessian, "hessian")
        g = as_matrix(self.linear, "linear term")
        if h.shape[0] != self.partition.d1:
            raise ShapeMismatchError(
                f"hessian dim {h.shape[0]} != partition d1 {self.partition.d1}"
            )
        if g.shape[0] != h.shape[0]:
            raise ShapeMismatchError(f"linear term has {g.shape[0]} rows, expected {h.shape[0]}")
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "linear", g)
        object.__setattr__(self, "const_term", float(self.const_term))

    @property
    def d1(self) -> int:
        return self.hessian.shape[0]

    @property
    def d2(self) -> int:
        return self.linear.shape[1]

    @property
    def p(self) -> int:
        return self.partition.p


def normalize_selection(selection, p: int) -> np.ndarray:
    return as_index_set(selection, p, "prune selection")


def retained_indices(partition: GroupPartition, selection) -> np.ndarray:
    """Rows not forced to zero: the union of groups outside the selection."""
    sel = normalize_selection(selection, partition.p)
    kept = np.setdiff1d(np.arange(partition.p), sel, assume_unique=True)
    return partition.rows_of(kept)


def solve_direct(problem: QuadraticProblem, selection) -> tuple[float, np.ndarray]:
    """Optimal objective and retained-row weights for a pruned-group set.

    Solves the restricted normal equations from scratch; the incremental
    engine is checked against this.  An empty retained set collapses to
    objective zero and an empty weight matrix.
    """
    kept = retained_indices(problem.partition, selection)
    if kept.size == 0:
        return 0.0, np.zeros((0, problem.d2))
    h_kk = extract_block(problem.hessian, kept, kept)
    g_k = problem.linear[kept]
    weights = spd_solve_factored(spd_factor(h_kk), g_k)
    value = -0.5 * float(np.sum(g_k * weights))
    return value, weights


def objective_at(problem: QuadraticProblem, weights_full: np.ndarray) -> float:
    """Objective value at explicitly given full-shape weights (no refit)."""
    w = as_matrix(weights_full, "weights")
    if w.shape != (problem.d1, problem.d2):
        raise ShapeMismatchError(f"weights must be {problem.d1}x{problem.d2}, got {w.shape}")
    return float(0.5 * np.sum(w * (problem.hessian @ w)) - np.sum(problem.linear * w))


def reconstruction_loss(problem: QuadraticProblem, selection) -> float:
    """Optimal objective plus the stored constant: the layer's squared
    reconstruction error, nonnegative for calibration-built instances."""
    value, _ = solve_direct(problem, selection)
    return value + problem.const_term


def expand_weights(problem: QuadraticProblem, selection, weights_retained: np.ndarray) -> np.ndarray:
    """Scatter retained-row weights into a full d1 x d2 matrix, pruned rows zero."""
    full = np.zeros((problem.d1, problem.d2))
    kept = retained_indices(problem.partition, selection)
    full[kept] = weights_retained
    return full


# ---------------------------------------------------------------------------
# Problem bundles on disk: a directory with H.(csv|bin), G.(csv|bin),
# partition.json and meta.json ({"const_term": ..., "damping": ...}).  The
# stored Hessian is raw; the damping recorded in meta (or passed explicitly)
# is applied once at load.  Bundles written from in-memory problems record
# damping 0.0 because their Hessian is already damped.
# ---------------------------------------------------------------------------

DEFAULT_DAMPING = 1e-4


def _find_matrix_file(bundle: Path, stem: str) -> Path:
    for ext in (".bin", ".csv"):
        candidate = bundle / f"{stem}{ext}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"missing matrix file {bundle / (stem + '.bin')} (or .csv)")


def load_problem(bundle_dir, damping: float | None = None) -> QuadraticProblem:
    bundle = Path(bundle_dir)
    if not bundle.is_dir():
        raise FileNotFoundError(f"problem bundle directory not found: {bundle}")
    hessian = matrixio.read_matrix(_find_matrix_file(bundle, "H"))
    linear = matrixio.read_matrix(_find_matrix_file(bundle, "G"))
    with open(bundle / "partition.json") as fh:
        partition = GroupPartition.from_json_dict(json.load(fh))
    meta_path = bundle / "meta.json"
    meta = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    lam = damping if damping is not None else float(meta.get("damping", DEFAULT_DAMPING))
    return QuadraticProblem(
        hessian=damp(as_sym_matrix(hessian, "H"), lam),
        linear=linear,
        partition=partition,
        const_term=float(meta.get("const_term", 0.0)),
        sample_count=meta.get("sample_count"),
    )


def save_problem(problem: QuadraticProblem, bundle_dir, binary: bool = True) -> None:
    bundle = Path(bundle_dir)
    bundle.mkdir(parents=True, exist_ok=True)
    write = matrixio.write_matrix_binary if binary else matrixio.write_matrix_csv
    ext = "bin" if binary else "csv"
    write(bundle / f"H.{ext}", problem.hessian)
    write(bundle / f"G.{ext}", problem.linear)
    with open(bundle / "partition.json", "w") as fh:
        json.dump(problem.partition.to_json_dict(), fh, sort_keys=True)
        fh.write("\n")
    meta = {"const_term": problem.const_term, "damping": 0.0}
    if problem.sample_count is not None:
        meta["sample_count"] = problem.sample_count
    with open(bundle / "meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
