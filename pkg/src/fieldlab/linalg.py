"""Rank decisions and minimum-norm least squares on stacks of small systems."""
from __future__ import annotations

import numpy as np

EPS = np.finfo(float).eps


def rank_threshold(s: np.ndarray, shape: tuple[int, int], tol: float = 0.0) -> np.ndarray:
    """Singular-value cutoff relative to the largest singular value.

    ``s`` has shape (..., k). The cutoff is ``max(rows, cols) * eps * s_max``
    raised to ``tol * s_max`` when the caller asks for a looser floor.
    """
    smax = s[..., :1] if s.shape[-1] else np.zeros(s.shape[:-1] + (1,))
    return np.maximum(max(shape) * EPS, tol) * smax


def numerical_rank(M: np.ndarray, tol: float = 0.0) -> int | np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0 if M.ndim == 2 else np.zeros(M.shape[:-2], dtype=int)
    s = np.linalg.svd(M, compute_uv=False)
    thr = rank_threshold(s, M.shape[-2:], tol)
    r = np.sum(s > thr, axis=-1)
    return int(r) if M.ndim == 2 else r


def lstsq_min_norm(M: np.ndarray, b: np.ndarray, tol: float = 0.0):
    """Batched min-norm least squares.

    M: (P, R, C), b: (P, R). Returns (solution (P, C), residual norms (P,),
    ranks (P,)). Rank uses the same relative cutoff as ``numerical_rank``.
    """
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    P, R, C = M.shape
    if R == 0 or C == 0:
        return np.zeros((P, C)), np.linalg.norm(b, axis=-1) if R else np.zeros(P), np.zeros(P, dtype=int)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    thr = rank_threshold(s, (R, C), tol)
    keep = s > thr
    ranks = keep.sum(axis=-1)
    Ub = np.einsum("prk,pr->pk", U, b)
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    x = np.einsum("pkc,pk->pc", Vt, inv * Ub)
    proj = np.einsum("prk,pk->pr", U, np.where(keep, Ub, 0.0))
    resid = np.linalg.norm(b - proj, axis=-1)
    return x, resid, ranks


def null_space(A: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Orthonormal basis (columns) of the null space of a single matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    thr = rank_threshold(s[None, :], A.shape, tol)[0, 0] if s.size else 0.0
    r = int(np.sum(s > thr))
    return Vt[r:].T.copy()
