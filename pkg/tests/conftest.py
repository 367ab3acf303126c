import numpy as np
import pytest

from osscar import GroupPartition, QuadraticProblem


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def spd_matrix(rng, n, ridge=0.1):
    basis = rng.standard_normal((n, n))
    return basis.T @ basis + ridge * np.eye(n)


def identity_problem(norms, d2=1, const_term=0.0):
    """Identity-Hessian instance with singleton groups: fully separable,
    every subset objective is minus half the kept rows' squared norms."""
    norms = np.asarray(norms, dtype=float)
    d1 = norms.size
    linear = np.zeros((d1, d2))
    linear[:, 0] = norms
    return QuadraticProblem(
        hessian=np.eye(d1),
        linear=linear,
        partition=GroupPartition.dense(d1),
        const_term=const_term,
    )
