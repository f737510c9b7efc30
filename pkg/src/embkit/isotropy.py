"""IsoScore: how evenly an embedding set spreads its variance over dimensions.

The variance spectrum in the PCA basis is rescaled to have norm sqrt(n) and
compared with the all-ones vector. Its distance, scaled to [0, 1], is the
isotropy defect; the score maps the implied fraction of used dimensions to
[0, 1] so that one-direction data scores 0 and spherical data scores 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import EmbeddingMatrix
from .errors import DegenerateInputError, InvalidParameterError, StabilityError
from .numerics import as_matrix, covariance, sym_eigen


@dataclass(frozen=True)
class IsotropyReport:
    isoscore: float
    defect: float
    n_dims: int
    n_points: int
    raw: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "isoscore": self.isoscore,
            "defect": self.defect,
            "n_dims": self.n_dims,
            "n_points": self.n_points,
            "raw": dict(self.raw),
        }


def isotropy_defect(variances, n=None) -> float:
    sigma = np.asarray(variances, dtype=np.float64)
    n = sigma.size if n is None else int(n)
    if n < 2 or sigma.size != n:
        raise InvalidParameterError(f"need a variance vector of length n >= 2, got {sigma.size}")
    if (sigma < 0).any():
        raise InvalidParameterError("variances must be non-negative")
    norm = np.linalg.norm(sigma)
    if norm == 0.0:
        raise DegenerateInputError("all variances are zero")
    root_n = np.sqrt(n)
    normalized = root_n * sigma / norm
    return float(np.linalg.norm(normalized - 1.0) / np.sqrt(2.0 * (n - root_n)))


def score_from_defect(defect, n) -> float:
    """Isotropy score for a given defect, before clamping."""
    utilized = (n - defect**2 * (n - np.sqrt(n))) ** 2 / n**2
    return float((n * utilized - 1.0) / (n - 1.0))


def isoscore(X) -> IsotropyReport:
    M = X.matrix if isinstance(X, EmbeddingMatrix) else as_matrix(X)
    N, n = M.shape
    if N <= n:
        raise StabilityError(
            f"IsoScore needs more points than dimensions ({N} points, {n} dims); "
            "add points or reduce the dimension first"
        )
    if n < 2:
        raise InvalidParameterError("IsoScore needs at least 2 dimensions")
    spectrum = sym_eigen(covariance(M)).values
    # round-off can leave tiny negative eigenvalues on rank-deficient data
    spectrum = np.clip(spectrum, 0.0, None)
    raw_defect = isotropy_defect(spectrum, n)
    raw_score = score_from_defect(raw_defect, n)
    return IsotropyReport(
        isoscore=float(np.clip(raw_score, 0.0, 1.0)),
        defect=float(np.clip(raw_defect, 0.0, 1.0)),
        n_dims=n,
        n_points=N,
        raw={"isoscore": raw_score, "defect": raw_defect},
    )
