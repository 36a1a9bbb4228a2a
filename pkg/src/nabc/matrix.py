"""Cholesky factors and the correlation/angle bijection.

A positive definite unit-diagonal matrix ``R`` has a unique lower-triangular
Cholesky factor ``B`` with positive diagonal. Each row of ``B`` lies on the
unit sphere, so it can be written in hyperspherical coordinates. The
``p(p-1)/2`` angles in ``(0, pi)`` are the coordinates every other module
works with.

Indexing: documentation and user-facing cell labels are 1-based ``(i, j)``
with ``i > j``. Arrays are 0-based. Angle matrices are ``p x p`` arrays with
the strict lower triangle filled and ``nan`` elsewhere. Batched routines use
flat cell vectors in :func:`cell_indices` order, which is row-major over the
strict lower triangle: ``(2,1), (3,1), (3,2), (4,1), ...``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import (
    ConvergenceFailure,
    DegenerateSine,
    DimensionMismatch,
    DomainError,
    InvalidPermutation,
    NotPositiveDefinite,
)

PIVOT_TOL = 1e-12
CLAMP = 1e-12
SINE_FLOOR = 1e-300


def n_cells(p: int) -> int:
    return p * (p - 1) // 2


def dim_from_cells(m: int) -> int:
    """Invert ``m = p(p-1)/2``."""
    p = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if n_cells(p) != m:
        raise DimensionMismatch(f"{m} is not a triangular cell count")
    return p


def cell_indices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """0-based ``(rows, cols)`` of the strict lower triangle, row-major."""
    return np.tril_indices(p, -1)


def cell_labels(p: int) -> list[tuple[int, int]]:
    """1-based ``(i, j)`` labels in :func:`cell_indices` order."""
    r, c = cell_indices(p)
    return [(int(i) + 1, int(j) + 1) for i, j in zip(r, c)]


def cell_position(p: int, i: int, j: int) -> int:
    """Flat position of the 1-based cell ``(i, j)``; order of ``i, j`` is free."""
    i, j = max(i, j), min(i, j)
    if not 1 <= j < i <= p:
        raise IndexError(f"cell ({i},{j}) outside a {p}x{p} lower triangle")
    return (i - 1) * (i - 2) // 2 + (j - 1)


def lower_vector(M: np.ndarray) -> np.ndarray:
    """Strict lower triangle of ``M`` (or a stack of them) as flat vectors."""
    M = np.asarray(M, dtype=float)
    r, c = cell_indices(M.shape[-1])
    return M[..., r, c]


def symmetric_from_vector(v: np.ndarray, p: int | None = None, diag: float = 1.0) -> np.ndarray:
    """Rebuild symmetric matrices from flat lower-triangle vectors."""
    v = np.asarray(v, dtype=float)
    if p is None:
        p = dim_from_cells(v.shape[-1])
    out = np.zeros(v.shape[:-1] + (p, p))
    r, c = cell_indices(p)
    out[..., r, c] = v
    out[..., c, r] = v
    idx = np.arange(p)
    out[..., idx, idx] = diag
    return out


def angle_matrix_from_vector(v: np.ndarray, p: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if p is None:
        p = dim_from_cells(v.shape[-1])
    out = np.full(v.shape[:-1] + (p, p), np.nan)
    r, c = cell_indices(p)
    out[..., r, c] = v
    return out


def check_dependence_matrix(R, atol: float = 1e-10) -> np.ndarray:
    """Return ``R`` as a float array after checking shape, symmetry, unit diagonal."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise DomainError("matrix has non-finite entries")
    if not np.allclose(R, R.T, atol=atol, rtol=0):
        raise DomainError("matrix is not symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=atol, rtol=0):
        raise DomainError("matrix does not have a unit diagonal")
    if np.abs(R).max() > 1.0 + atol:
        raise DomainError("matrix has entries outside [-1, 1]")
    return R


def cholesky_lower(R, tol: float = PIVOT_TOL) -> np.ndarray:
    """Lower Cholesky factor by the textbook row recursion.

    Parameters
    ----------
    R : array_like, shape (p, p)
        Symmetric matrix with unit diagonal.
    tol : float
        Pivots at or below this value are treated as failure.

    Returns
    -------
    ndarray
        ``B`` with ``B @ B.T == R`` and positive diagonal.

    Raises
    ------
    NotPositiveDefinite
        With the 1-based diagonal cell where the recursion broke down.
    """
    R = np.asarray(R, dtype=float)
    p = R.shape[0]
    B = np.zeros((p, p))
    for i in range(p):
        for j in range(i):
            B[i, j] = (R[i, j] - B[i, :j] @ B[j, :j]) / B[j, j]
        pivot = R[i, i] - B[i, :i] @ B[i, :i]
        if not pivot > tol:
            raise NotPositiveDefinite(cell=(i + 1, i + 1), pivot=float(pivot))
        B[i, i] = np.sqrt(pivot)
    return B


def cholesky_batch(Rs: np.ndarray, tol: float = PIVOT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`cholesky_lower` over a stack of matrices.

    Returns
    -------
    B : ndarray, shape (m, p, p)
        Factors; rows of failed matrices are left partially filled.
    ok : ndarray of bool, shape (m,)
        Whether every pivot exceeded ``tol``.
    """
    Rs = np.asarray(Rs, dtype=float)
    m, p, _ = Rs.shape
    B = np.zeros_like(Rs)
    ok = np.ones(m, dtype=bool)
    for j in range(p):
        pivot = Rs[:, j, j] - np.einsum("mk,mk->m", B[:, j, :j], B[:, j, :j])
        good = pivot > tol
        ok &= good
        d = np.sqrt(np.where(good, pivot, 1.0))
        B[:, j, j] = d
        if j + 1 < p:
            below = Rs[:, j + 1:, j] - np.einsum("mik,mk->mi", B[:, j + 1:, :j], B[:, j, :j])
            B[:, j + 1:, j] = below / d[:, None]
    return B, ok


def is_positive_definite(R, tol: float = PIVOT_TOL) -> bool:
    try:
        cholesky_lower(R, tol)
    except NotPositiveDefinite:
        return False
    return True


def _angles_from_factor(B: np.ndarray) -> np.ndarray:
    """Angles (flat cell vectors) from a stack of Cholesky factors."""
    m, p, _ = B.shape
    out = np.empty((m, n_cells(p)))
    # running sine product for every row, updated column by column
    sprod = np.ones((m, p))
    theta = np.full((m, p, p), np.nan)
    for j in range(p - 1):
        rows = slice(j + 1, p)
        s = sprod[:, rows]
        if np.any(s < SINE_FLOOR):
            raise DegenerateSine(f"sine product below {SINE_FLOOR} in column {j + 1}")
        arg = np.clip(B[:, rows, j] / s, -1 + CLAMP, 1 - CLAMP)
        t = np.arccos(arg)
        theta[:, rows, j] = t
        sprod[:, rows] = s * np.sin(t)
    r, c = cell_indices(p)
    out[:] = theta[:, r, c]
    return out


def corr_to_angles(R) -> np.ndarray:
    """Angle matrix of a positive definite matrix.

    Returns a ``p x p`` array with angles in the strict lower triangle and
    ``nan`` elsewhere.

    Examples
    --------
    >>> import numpy as np
    >>> th = corr_to_angles(np.array([[1.0, 0.5], [0.5, 1.0]]))
    >>> bool(np.isclose(th[1, 0], np.pi / 3))
    True
    """
    R = np.asarray(R, dtype=float)
    B = cholesky_lower(R)
    v = _angles_from_factor(B[None])[0]
    return angle_matrix_from_vector(v, R.shape[0])


def corr_to_angle_vectors(Rs: np.ndarray, tol: float = PIVOT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Batched angles for a stack of matrices.

    Returns
    -------
    theta : ndarray, shape (m, p(p-1)/2)
        Angles of the matrices that passed; rows for failures are ``nan``.
    ok : ndarray of bool
        Positive-definiteness flags.
    """
    Rs = np.asarray(Rs, dtype=float)
    B, ok = cholesky_batch(Rs, tol)
    theta = np.full((Rs.shape[0], n_cells(Rs.shape[-1])), np.nan)
    if ok.any():
        theta[ok] = _angles_from_factor(B[ok])
    return theta, ok


def factor_from_angle_vectors(theta: np.ndarray, p: int | None = None) -> np.ndarray:
    """Cholesky factors ``B`` (stack) from flat angle vectors (stack)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if p is None:
        p = dim_from_cells(theta.shape[-1])
    m = theta.shape[0]
    T = np.zeros((m, p, p))
    r, c = cell_indices(p)
    T[:, r, c] = theta
    cosT = np.cos(T)
    sinT = np.sin(T)
    B = np.zeros((m, p, p))
    sprod = np.ones((m, p))
    for j in range(p):
        # diagonal: product of all sines in the row
        B[:, j, j] = sprod[:, j]
        rows = slice(j + 1, p)
        B[:, rows, j] = cosT[:, rows, j] * sprod[:, rows]
        sprod[:, rows] = sprod[:, rows] * sinT[:, rows, j]
    return B


def angle_vectors_to_corr(theta: np.ndarray, p: int | None = None) -> np.ndarray:
    """Batched inverse of :func:`corr_to_angle_vectors`; returns ``(m, p, p)``."""
    B = factor_from_angle_vectors(theta, p)
    R = B @ np.swapaxes(B, -1, -2)
    idx = np.arange(R.shape[-1])
    R[:, idx, idx] = 1.0
    return R


def angles_to_corr(theta) -> np.ndarray:
    """Correlation matrix from a ``p x p`` angle matrix (strict lower triangle used)."""
    theta = np.asarray(theta, dtype=float)
    v = lower_vector(theta)
    return angle_vectors_to_corr(v[None], theta.shape[0])[0]


def _check_perm(order: Sequence[int], p: int) -> np.ndarray:
    order = np.asarray(order)
    if order.shape != (p,) or not np.array_equal(np.sort(order), np.arange(p)):
        raise InvalidPermutation(f"{list(order)} is not a permutation of 0..{p - 1}")
    return order.astype(int)


def permute(R, order: Sequence[int]) -> np.ndarray:
    """Reorder rows and columns together.

    ``order[k]`` is the 0-based original index placed at position ``k``, so
    ``permute(R, order)[a, b] == R[order[a], order[b]]``.
    """
    R = np.asarray(R, dtype=float)
    o = _check_perm(order, R.shape[-1])
    return R[..., o[:, None], o[None, :]]


def inverse_permutation(order: Sequence[int]) -> np.ndarray:
    o = _check_perm(order, len(order))
    inv = np.empty_like(o)
    inv[o] = np.arange(len(o))
    return inv


def eigenvalues(R) -> np.ndarray:
    """Real spectrum of a symmetric matrix, descending."""
    try:
        lam = np.linalg.eigvalsh(np.asarray(R, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return lam[::-1]


def nearest_pd(R, eps: float = 1e-8) -> np.ndarray:
    """Eigenvalue-clipping repair to a PD unit-diagonal matrix.

    Only reachable through an explicit opt-in; any report built on a repaired
    matrix is marked as such, since repair distorts the sampling distribution.
    """
    R = np.asarray(R, dtype=float)
    lam, V = np.linalg.eigh((R + R.T) / 2)
    S = (V * np.maximum(lam, eps)) @ V.T
    d = np.sqrt(np.diag(S))
    S = S / np.outer(d, d)
    np.fill_diagonal(S, 1.0)
    return S
