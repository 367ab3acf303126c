"""Dense symmetric linear algebra used by the pruning solver.

Everything is 64-bit floats.  The incremental update cascade compounds
rounding, so derived symmetric matrices are re-symmetrized by averaging
with their transpose, and positive definiteness is always established by
an actual Cholesky factorization rather than heuristics.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .errors import NotPositiveDefiniteError, ShapeMismatchError

# Construction-time symmetry tolerance: |A[i,j] - A[j,i]| <= tol * (1 + |A[i,j]|).
SYMMETRY_RTOL = 1e-12


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validated float64 2-D array: correct dtype, no NaN/Inf entries."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) * 0.5


def as_sym_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate square shape and symmetry, then symmetrize by averaging."""
    arr = as_matrix(data, name)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeMismatchError(f"{name} must be square, got shape {arr.shape}")
    gap = np.abs(arr - arr.T)
    bound = SYMMETRY_RTOL * (1.0 + np.abs(arr))
    if np.any(gap > bound):
        worst = float(np.max(gap))
        raise ValueError(f"{name} is not symmetric (max asymmetry {worst:.3e})")
    return symmetrize(arr)


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a, or NotPositiveDefiniteError."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc


def spd_factor(a: np.ndarray):
    """Cholesky factor handle for repeated solves against the same matrix."""
    if a.shape[0] == 0:
        return None
    try:
        return sla.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc


def spd_solve_factored(factor, b: np.ndarray) -> np.ndarray:
    if factor is None:
        return np.zeros_like(b)
    return sla.cho_solve(factor, b, check_finite=False)


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for symmetric positive definite a."""
    return spd_solve_factored(spd_factor(a), b)


def inverse_spd(a: np.ndarray) -> np.ndarray:
    """Explicit inverse of a positive definite matrix, symmetrized."""
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    inv = spd_solve(a, np.eye(n))
    return symmetrize(inv)


def extract_block(a: np.ndarray, rows, cols) -> np.ndarray:
    """Gather a[rows, cols] as a fresh (len(rows), len(cols)) array."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    for idx, axis_len, label in ((rows, a.shape[0], "row"), (cols, a.shape[1], "col")):
        if idx.size and (idx.min() < 0 or idx.max() >= axis_len):
            raise IndexError(f"{label} index out of range [0, {axis_len})")
    return a[np.ix_(rows, cols)]


def damp(a: np.ndarray, lambda_rel: float) -> np.ndarray:
    """a + lambda_rel * mean(diag(a)) * I, falling back to lambda_rel * I
    when the diagonal mean is zero."""
    if lambda_rel < 0:
        raise ValueError("damping must be nonnegative")
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if lambda_rel == 0.0 or n == 0:
        return a.copy()
    scale = float(np.mean(np.diagonal(a)))
    if scale == 0.0:
        scale = 1.0
    return a + (lambda_rel * scale) * np.eye(n)
