"""TwoNN intrinsic-dimension estimator.

For data sampled on a d-dimensional manifold the ratio mu = r2 / r1 of each
point's second- to first-neighbour distance is Pareto distributed with
shape d, so -log(1 - F(mu)) = d * log(mu). The estimator fits that line
through the origin on the empirical CDF after trimming the largest ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddingMatrix
from .errors import InsufficientDataError, InvalidParameterError, NonIdentifiableError
from .numerics import as_matrix, knn

MIN_POINTS = 12
DEFAULT_DISCARD = 0.10


@dataclass(frozen=True)
class RatioSample:
    mu: np.ndarray
    kept_fraction: float
    n_duplicates: int = 0
    ambient_dim: int | None = None


@dataclass(frozen=True)
class IdEstimate:
    id: float
    n_used: int
    discard_fraction: float
    mle: float
    n_duplicates: int = 0
    exceeds_ambient: bool = False

    def as_dict(self):
        return {
            "id": self.id,
            "n_used": self.n_used,
            "discard_fraction": self.discard_fraction,
            "mle": self.mle,
            "n_duplicates": self.n_duplicates,
            "exceeds_ambient": self.exceeds_ambient,
        }


def twonn_ratios(X, threads=1) -> RatioSample:
    """Neighbour-distance ratios of every distinct point.

    Exact duplicate rows are collapsed to their first occurrence before the
    neighbour search and reported in ``n_duplicates``.
    """
    M = X.matrix if isinstance(X, EmbeddingMatrix) else as_matrix(X)
    N = M.shape[0]
    _, first = np.unique(M, axis=0, return_index=True)
    unique = M[np.sort(first)]
    n_dup = N - unique.shape[0]
    if unique.shape[0] < MIN_POINTS:
        raise InsufficientDataError(
            f"TwoNN needs at least {MIN_POINTS} distinct points, got {unique.shape[0]}"
        )
    nt = knn(unique, 2, threads=threads)
    r1, r2 = nt.distances[:, 0], nt.distances[:, 1]
    mu = r2 / r1
    return RatioSample(mu, unique.shape[0] / N, n_dup, M.shape[1])


def twonn_fit(s: RatioSample, discard_fraction=DEFAULT_DISCARD) -> IdEstimate:
    """Fit the Pareto shape to a ratio sample.

    Ratios are sorted, given CDF values F_i = i / N, and the top
    ``discard_fraction`` of them dropped (the last point is always dropped,
    since F = 1 has no finite log). The slope of -log(1 - F) on log(mu)
    through the origin is the estimate. ``mle`` is the closed form
    N / sum(log mu) over the untrimmed sample, kept as a cross-check.
    """
    if not 0 <= discard_fraction < 0.5:
        raise InvalidParameterError(f"discard_fraction must be in [0, 0.5), got {discard_fraction}")
    mu = np.sort(np.asarray(s.mu, dtype=np.float64))
    N = mu.size
    if N < MIN_POINTS:
        raise InsufficientDataError(f"TwoNN needs at least {MIN_POINTS} ratios, got {N}")
    n_keep = min(int(np.floor(N * (1.0 - discard_fraction))), N - 1)
    if n_keep < 10:
        raise InsufficientDataError(f"only {n_keep} ratios left after trimming; need 10")
    x = np.log(mu[:n_keep])
    F = np.arange(1, n_keep + 1) / N
    y = -np.log1p(-F)
    sxx = float(np.dot(x, x))
    log_sum = float(np.sum(np.log(mu)))
    if sxx == 0.0 or log_sum == 0.0:
        raise NonIdentifiableError("all neighbour ratios equal 1; the dimension is not identifiable")
    d = float(np.dot(x, y)) / sxx
    ambient = s.ambient_dim
    return IdEstimate(
        id=d,
        n_used=n_keep,
        discard_fraction=float(discard_fraction),
        mle=N / log_sum,
        n_duplicates=s.n_duplicates,
        exceeds_ambient=bool(ambient is not None and d > ambient),
    )


def twonn(X, discard_fraction=DEFAULT_DISCARD, threads=1) -> IdEstimate:
    return twonn_fit(twonn_ratios(X, threads=threads), discard_fraction)
