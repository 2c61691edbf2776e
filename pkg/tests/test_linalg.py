import numpy as np
from hypothesis import given, strategies as st

from fieldlab.linalg import lstsq_min_norm, null_space, numerical_rank


def low_rank(seed, R, C, r):
    g = np.random.default_rng(seed)
    return g.normal(size=(R, r)) @ g.normal(size=(r, C))


@given(st.integers(0, 10**6), st.integers(1, 7), st.integers(1, 7), st.integers(0, 7))
def test_rank_of_products(seed, R, C, r):
    r = min(r, R, C)
    assert numerical_rank(low_rank(seed, R, C, r) if r else np.zeros((R, C))) == r


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_min_norm_matches_pinv(seed, R, C):
    g = np.random.default_rng(seed)
    M = low_rank(seed, R, C, min(R, C, 2))
    b = g.normal(size=R)
    x, resid, ranks = lstsq_min_norm(M[None], b[None])
    ref = np.linalg.pinv(M) @ b
    assert np.allclose(x[0], ref, atol=1e-8 * (1 + np.abs(ref).max()))
    assert np.isclose(resid[0], np.linalg.norm(M @ ref - b), atol=1e-8)
    assert ranks[0] == np.linalg.matrix_rank(M)


def test_consistent_system_has_zero_residual():
    M = np.array([[[1.0, 2.0], [2.0, 4.0]]])
    _, resid, ranks = lstsq_min_norm(M, np.array([[1.0, 2.0]]))
    assert resid[0] < 1e-14 and ranks[0] == 1
    _, resid, _ = lstsq_min_norm(M, np.array([[1.0, 0.0]]))
    assert resid[0] > 0.1


def test_empty_systems():
    x, resid, ranks = lstsq_min_norm(np.zeros((3, 0, 2)), np.zeros((3, 0)))
    assert x.shape == (3, 2) and np.all(resid == 0) and np.all(ranks == 0)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_null_space_is_orthonormal_kernel(seed, R, C):
    A = low_rank(seed, R, C, min(R, C, 2))
    N = null_space(A)
    assert N.shape == (C, C - np.linalg.matrix_rank(A))
    assert np.allclose(A @ N, 0, atol=1e-10)
    assert np.allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-10)


def test_tolerance_floor():
    M = np.diag([1.0, 1e-9])
    assert numerical_rank(M) == 2
    assert numerical_rank(M, tol=1e-6) == 1
