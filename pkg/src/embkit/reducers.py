"""Post-hoc dimensionality reduction: first-d, random-d, PCA and Isomap.

Every method is split into :func:`fit` and :func:`apply` so that several
matrices from one task (queries and passages, train and test) can share a
single fitted transform. :func:`reduce_together` does exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .dataset import EmbeddingMatrix
from .errors import (
    ConnectivityError,
    ContractError,
    InvalidParameterError,
    UnsupportedOperationError,
)
from .numerics import covariance, knn, sym_eigen, top_eigen
from .rng import CounterRNG

KINDS = ("first", "random", "pca", "isomap")
DEFAULT_NEIGHBORS = 15


@dataclass(frozen=True)
class Reducer:
    kind: str
    target_dim: int
    seed: int = 0
    n_neighbors: int = DEFAULT_NEIGHBORS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown reduction method {self.kind!r}; use one of {KINDS}")
        if int(self.target_dim) < 1:
            raise InvalidParameterError(f"target dim must be >= 1, got {self.target_dim}")
        if self.kind == "isomap" and self.n_neighbors < 2:
            raise InvalidParameterError(f"isomap needs n_neighbors >= 2, got {self.n_neighbors}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameterError(f"seed must be a u64, got {self.seed}")


@dataclass(frozen=True, eq=False)
class FittedReducer:
    reducer: Reducer
    source_dim: int
    indices: np.ndarray | None = None
    mean: np.ndarray | None = None
    basis: np.ndarray | None = None
    variances: np.ndarray | None = None
    training: np.ndarray | None = None
    geodesics: np.ndarray | None = None
    embedding: np.ndarray | None = None

    @property
    def kind(self):
        return self.reducer.kind


def random_dimensions(n_dims, seed, task_id="") -> np.ndarray:
    """Full seeded permutation of column indices for ``(seed, task_id)``.

    Taking a prefix of length d draws d columns without replacement; prefixes
    are nested, so a smaller selection is always contained in a larger one.
    """
    return CounterRNG(seed, "random-dims", task_id).permutation(n_dims)


def geodesic_distances(X, n_neighbors=DEFAULT_NEIGHBORS) -> np.ndarray:
    """All-pairs shortest paths over the symmetrised k-NN graph (Dijkstra).

    Raises :class:`ConnectivityError` when the graph has several components.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    nt = knn(X, n_neighbors)
    rows = np.repeat(np.arange(N), n_neighbors)
    # zero-length edges between duplicates must survive as explicit edges
    weights = np.maximum(nt.distances.ravel(), np.finfo(np.float64).tiny)
    graph = csr_matrix((weights, (rows, nt.indices.ravel())), shape=(N, N))
    graph = graph.maximum(graph.T)
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp > 1:
        raise ConnectivityError(n_comp)
    G = shortest_path(graph, method="D", directed=False)
    return (G + G.T) / 2


def classical_mds(distances, n_components) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates whose Euclidean distances approximate ``distances``.

    Double-centres the squared distances, B = -1/2 J D^2 J, and scales the top
    eigenvectors by the square roots of their eigenvalues (negatives clamped to 0).
    Returns ``(coords, eigenvalues)``.
    """
    D2 = np.asarray(distances, dtype=np.float64) ** 2
    B = D2 - D2.mean(axis=0)[None, :] - D2.mean(axis=1)[:, None] + D2.mean()
    B = -0.5 * (B + B.T) / 2
    eig = top_eigen(B, n_components)
    lam = np.clip(eig.values, 0.0, None)
    return eig.vectors * np.sqrt(lam), eig.values


def fit(r: Reducer, X, task_id="") -> FittedReducer:
    M = X.matrix if isinstance(X, EmbeddingMatrix) else np.asarray(X, dtype=np.float64)
    N, D = M.shape
    d = int(r.target_dim)
    if d > D:
        raise InvalidParameterError(f"target dim {d} exceeds source dimension {D}")
    if r.kind == "first":
        return FittedReducer(r, D, indices=np.arange(d))
    if r.kind == "random":
        return FittedReducer(r, D, indices=random_dimensions(D, r.seed, task_id)[:d])
    if r.kind == "pca":
        eig = sym_eigen(covariance(M))
        return FittedReducer(
            r, D,
            mean=M.mean(axis=0),
            basis=np.ascontiguousarray(eig.vectors[:, :d]),
            variances=eig.values,
        )
    if r.n_neighbors >= N:
        raise InvalidParameterError(f"isomap n_neighbors={r.n_neighbors} needs more than {N} points")
    if d > N:
        raise InvalidParameterError(f"isomap target dim {d} exceeds number of points {N}")
    G = geodesic_distances(M, r.n_neighbors)
    coords, _ = classical_mds(G, d)
    return FittedReducer(r, D, training=np.array(M), geodesics=G, embedding=coords)


def apply(f: FittedReducer, X) -> EmbeddingMatrix:
    emb = X if isinstance(X, EmbeddingMatrix) else EmbeddingMatrix(X)
    M = emb.matrix
    if M.shape[1] != f.source_dim:
        raise ContractError(f"reducer was fit on {f.source_dim} columns, got {M.shape[1]}")
    if f.kind in ("first", "random"):
        out = np.ascontiguousarray(M[:, f.indices])
    elif f.kind == "pca":
        out = (M - f.mean) @ f.basis
    else:
        if M.shape != f.training.shape or not np.array_equal(M, f.training):
            raise UnsupportedOperationError(
                "isomap is batch-only: apply it to the matrix it was fit on"
            )
        out = f.embedding
    return emb.replace(np.array(out, dtype=np.float64))


def reduce_together(r: Reducer, mats, task_id=""):
    """Fit one transform on the row-concatenation of ``mats`` and apply it to each."""
    mats = list(mats)
    if len(mats) == 1:
        f = fit(r, mats[0], task_id)
        return [apply(f, mats[0])]
    stacked = EmbeddingMatrix(np.vstack([m.matrix for m in mats]))
    f = fit(r, stacked, task_id)
    out = apply(f, stacked).matrix
    bounds = np.cumsum([0] + [m.rows for m in mats])
    return [m.replace(out[a:b].copy()) for m, a, b in zip(mats, bounds[:-1], bounds[1:])]
