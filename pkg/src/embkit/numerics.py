"""Dense linear algebra and exact nearest-neighbour search shared by every module."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ContractError, DegenerateInputError, InvalidParameterError

KNN_BLOCK = 512


def as_matrix(X, name="X", min_rows=1) -> np.ndarray:
    """Validate ``X`` as a finite 2-D float64 array and return it (copied only if needed)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < min_rows or X.shape[1] < 1:
        raise DegenerateInputError(
            f"{name} has shape {X.shape}; need at least {min_rows} row(s) and 1 column"
        )
    if not np.isfinite(X).all():
        bad = np.argwhere(~np.isfinite(X))[0]
        raise ContractError(f"{name} has a non-finite entry at row {bad[0]}, column {bad[1]}")
    return X


def covariance(X) -> np.ndarray:
    """Sample covariance (divisor N-1) of the columns of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateInputError("covariance needs at least 2 rows")
    X = as_matrix(X, min_rows=2)
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    # exact symmetry; the product is symmetric only up to rounding
    return (C + C.T) / 2


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray


def _check_symmetric(M, tol=1e-9):
    M = as_matrix(M, name="M")
    if M.shape[0] != M.shape[1]:
        raise ContractError(f"matrix must be square, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > tol * scale:
        raise ContractError("matrix is not symmetric")
    return M


def _canonical(values, vectors) -> EigenResult:
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order].copy()
    # sign convention: largest-magnitude entry of each eigenvector is positive
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    vectors *= signs
    return EigenResult(values, vectors)


def jacobi_eigen(M, tol=1e-12, max_sweeps=100) -> EigenResult:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps over all (p, q) pairs until the off-diagonal Frobenius norm drops
    below ``tol * ||M||_F``. Cost is O(n^3) per sweep with a Python-level loop
    over pairs, so it is meant for small matrices and for cross-checking.
    """
    A = _check_symmetric(M).copy()
    n = A.shape[0]
    V = np.eye(n)
    target = tol * np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                gap = A[q, q] - A[p, p]
                if abs(apq) < 1e-150 * max(abs(gap), 1e-300):
                    A[p, q] = A[q, p] = 0.0
                    continue
                tau = gap / (2.0 * apq)
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                colp, colq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp, rowq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return _canonical(np.diag(A).copy(), V)


def sym_eigen(M, method="lapack") -> EigenResult:
    """Full spectral decomposition of a symmetric matrix.

    Eigenvalues are returned in non-increasing order and each eigenvector is
    sign-fixed so that its largest-magnitude entry is positive (first such
    entry on ties). ``method="jacobi"`` uses :func:`jacobi_eigen`; the default
    calls LAPACK's symmetric solver, which scales to D in the thousands.
    """
    if method == "jacobi":
        return jacobi_eigen(M)
    if method != "lapack":
        raise InvalidParameterError(f"unknown eigen method {method!r}")
    M = _check_symmetric(M)
    values, vectors = np.linalg.eigh(M)
    return _canonical(values, vectors)


def top_eigen(M, k) -> EigenResult:
    """Leading ``k`` eigenpairs of a symmetric matrix, same conventions as :func:`sym_eigen`."""
    M = _check_symmetric(M)
    n = M.shape[0]
    if not 1 <= k <= n:
        raise InvalidParameterError(f"k must be in [1, {n}], got {k}")
    values, vectors = scipy.linalg.eigh(M, subset_by_index=[n - k, n - 1])
    return _canonical(values, vectors)


@dataclass(frozen=True)
class NeighborTable:
    """k nearest distinct-index neighbours of every row, nearest first.

    ``duplicate[i, j]`` is set when neighbour j of point i sits at distance 0.
    """

    indices: np.ndarray
    distances: np.ndarray
    duplicate: np.ndarray

    @property
    def k(self):
        return self.indices.shape[1]


def _knn_block(X, Xc, sqn, start, stop, k, n_cand):
    N = X.shape[0]
    G = Xc[start:stop] @ Xc.T
    d2 = sqn[start:stop, None] + sqn[None, :] - 2.0 * G
    rows = np.arange(start, stop)
    d2[rows - start, rows] = np.inf
    if n_cand < N - 1:
        cand = np.argpartition(d2, n_cand - 1, axis=1)[:, :n_cand]
    else:
        cand = np.argsort(d2, axis=1, kind="stable")[:, : N - 1]
    # exact distances on the candidate set decide the final order
    diff = X[cand] - X[start:stop, None, :]
    exact = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    order = np.lexsort((cand, exact), axis=-1)[:, :k]
    idx = np.take_along_axis(cand, order, axis=1)
    dist = np.take_along_axis(exact, order, axis=1)
    if n_cand < N - 1:
        # a point left out of the shortlist may still tie (or, through Gram
        # rounding, beat) the k-th distance; redo those rows on a wider set
        slack = 1e-9 * (sqn[start:stop] + sqn.max()) + 1e-300
        thr = dist[:, -1] ** 2 + slack
        inside = d2 <= thr[:, None]
        in_cand = np.take_along_axis(inside, cand, axis=1).sum(axis=1)
        for r in np.flatnonzero(inside.sum(axis=1) > in_cand):
            wide = np.flatnonzero(inside[r])
            diff = X[wide] - X[start + r]
            ex = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            o = np.lexsort((wide, ex))[:k]
            idx[r], dist[r] = wide[o], ex[o]
    return idx, dist


def knn(X, k, threads=1) -> NeighborTable:
    """Exact Euclidean k-nearest neighbours by blocked brute force.

    The self index is excluded and ties are broken by the lower row index.
    A Gram-matrix pass over mean-centred data shortlists ``k + max(8, k)``
    candidates per row; the final distances and order come from explicit
    coordinate differences, so the output does not depend on BLAS rounding,
    block layout, or ``threads``.
    """
    X = as_matrix(X)
    N = X.shape[0]
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    if k >= N:
        raise InvalidParameterError(f"k={k} needs more than {k} points, got {N}")
    Xc = X - X.mean(axis=0)
    sqn = np.einsum("ij,ij->i", Xc, Xc)
    n_cand = min(N - 1, k + max(8, k))
    indices = np.empty((N, k), dtype=np.int64)
    distances = np.empty((N, k))
    # bound the (block, n_cand, D) difference tensor to ~32 MB
    block = max(1, min(KNN_BLOCK, 4_000_000 // (n_cand * X.shape[1])))
    starts = range(0, N, block)

    def work(start):
        stop = min(N, start + block)
        indices[start:stop], distances[start:stop] = _knn_block(
            X, Xc, sqn, start, stop, k, n_cand
        )

    if threads and threads > 1 and N > block:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return NeighborTable(indices, distances, distances == 0.0)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def normalize_rows(X, name="X") -> np.ndarray:
    """Unit-normalise rows for cosine scoring; a zero row is an error naming its index."""
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"{name} row {zero[0]} has zero norm")
    return X / norms[:, None]
