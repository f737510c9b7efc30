"""Seeded synthetic embeddings with known ground truth.

Each generator is a pure function of its arguments: the random stream is
keyed by the seed and the generator name, so identical arguments give
bitwise identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    ClassificationBundle,
    ClusteringBundle,
    EmbeddingMatrix,
    RetrievalBundle,
    StsBundle,
)
from .errors import InvalidParameterError
from .rng import CounterRNG, orthonormal_columns

SYNTH_KINDS = ("uniform_manifold", "gaussian_spectrum", "labeled_blobs", "retrieval_planted", "sts_planted")


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise InvalidParameterError(f"unknown synthetic kind {self.kind!r}")


def gen_uniform_manifold(d, D, N, seed=0) -> EmbeddingMatrix:
    """N points uniform on [0, 1]^d, placed in R^D by a random isometry.

    When d == D the cube is returned as is (no rotation), so the points stay
    in the unit cube.
    """
    if not 1 <= d <= D:
        raise InvalidParameterError(f"need 1 <= d <= D, got d={d}, D={D}")
    if N < 1:
        raise InvalidParameterError("N must be >= 1")
    rng = CounterRNG(seed, "uniform_manifold", d, D, N)
    cube = rng.uniform(N * d).reshape(N, d)
    if d == D:
        return EmbeddingMatrix(cube, source_tag=f"uniform_manifold(d={d},D={D})")
    Q = orthonormal_columns(rng, D, d)
    return EmbeddingMatrix(cube @ Q.T, source_tag=f"uniform_manifold(d={d},D={D})")


def gen_gaussian_spectrum(spectrum, N, seed=0) -> EmbeddingMatrix:
    """Zero-mean Gaussian draws with covariance R diag(spectrum) R^T, R random orthogonal."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.ndim != 1 or spectrum.size < 2:
        raise InvalidParameterError("spectrum must have at least 2 entries")
    if (spectrum < 0).any():
        raise InvalidParameterError("spectrum entries must be non-negative")
    n = spectrum.size
    rng = CounterRNG(seed, "gaussian_spectrum", n, N)
    Z = rng.normal((N, n)) * np.sqrt(spectrum)
    R = orthonormal_columns(rng, n, n)
    return EmbeddingMatrix(Z @ R.T, source_tag="gaussian_spectrum")


def _unit_directions(rng, C, D):
    V = rng.normal((C, D))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def gen_labeled_blobs(C, D, per_class, separation, seed=0, signal_dims=None):
    """Gaussian blobs (unit within-class sigma) around means at ``separation``
    times a random unit direction.

    With ``signal_dims`` set, the mean directions live in the first
    ``signal_dims`` coordinates only and the rest are pure noise. Returns a
    ``(ClassificationBundle, ClusteringBundle)``; the classification split is
    80/20 stratified, the clustering bundle holds every point.
    """
    if C < 2:
        raise InvalidParameterError(f"need at least 2 classes, got {C}")
    if per_class < 2:
        raise InvalidParameterError(f"need at least 2 points per class, got {per_class}")
    if separation < 0:
        raise InvalidParameterError("separation must be non-negative")
    k = D if signal_dims is None else int(signal_dims)
    if not 1 <= k <= D:
        raise InvalidParameterError(f"signal_dims must be in [1, {D}]")
    rng = CounterRNG(seed, "labeled_blobs", C, D, per_class, k)
    means = np.zeros((C, D))
    means[:, :k] = separation * _unit_directions(rng, C, k)
    n_train = min(per_class - 1, max(1, int(round(0.8 * per_class))))
    train, test, train_y, test_y, all_x, all_y = [], [], [], [], [], []
    for c in range(C):
        pts = means[c] + rng.normal((per_class, D))
        label = f"c{c}"
        train.append(pts[:n_train])
        test.append(pts[n_train:])
        train_y += [label] * n_train
        test_y += [label] * (per_class - n_train)
        all_x.append(pts)
        all_y += [label] * per_class
    cls = ClassificationBundle(
        EmbeddingMatrix(np.vstack(train), "classification", "blobs/train"),
        tuple(train_y),
        EmbeddingMatrix(np.vstack(test), "classification", "blobs/test"),
        tuple(test_y),
    )
    clu = ClusteringBundle(EmbeddingMatrix(np.vstack(all_x), "clustering", "blobs/points"), tuple(all_y))
    return cls, clu


def gen_retrieval_planted(nq, npass, D, noise, seed=0) -> RetrievalBundle:
    """Isotropic queries, each with one relevant passage = query + noise * N(0, I).

    The remaining ``npass - nq`` passages are isotropic distractors; passage
    order is shuffled so relevant ones are not at predictable indices.
    """
    if nq < 1 or npass < 2 or npass < nq:
        raise InvalidParameterError(f"need nq >= 1 and npass >= max(2, nq), got nq={nq}, npass={npass}")
    if noise < 0:
        raise InvalidParameterError("noise must be non-negative")
    rng = CounterRNG(seed, "retrieval_planted", nq, npass, D)
    Q = rng.normal((nq, D))
    relevant = Q + noise * rng.normal((nq, D))
    distractors = rng.normal((npass - nq, D))
    pool = np.vstack([relevant, distractors])
    perm = rng.permutation(npass)
    passages = np.empty_like(pool)
    passages[perm] = pool
    qrels = tuple((q, int(perm[q]), 1) for q in range(nq))
    return RetrievalBundle(
        EmbeddingMatrix(Q, "retrieval_query", "planted/queries"),
        EmbeddingMatrix(passages, "retrieval_passage", "planted/passages"),
        qrels,
    )


def gen_sts_planted(npairs, D, noise, seed=0) -> StsBundle:
    """Sentence pairs whose gold score is the cosine of the pair before noise.

    Pair i is (a_i, b_i) with b_i = t_i a_i + sqrt(1 - t_i^2) z_i, t_i uniform
    on [-1, 1]; noise * N(0, I) is then added to b_i. Row 2i holds a_i and
    row 2i+1 holds b_i.
    """
    if npairs < 3:
        raise InvalidParameterError(f"need at least 3 pairs, got {npairs}")
    if noise < 0:
        raise InvalidParameterError("noise must be non-negative")
    rng = CounterRNG(seed, "sts_planted", npairs, D)
    A = rng.normal((npairs, D))
    Z = rng.normal((npairs, D))
    t = 2.0 * rng.uniform(npairs) - 1.0
    B = t[:, None] * A + np.sqrt(1.0 - t**2)[:, None] * Z
    An = A / np.linalg.norm(A, axis=1, keepdims=True)
    Bn = B / np.linalg.norm(B, axis=1, keepdims=True)
    gold = np.clip(np.einsum("ij,ij->i", An, Bn), -1.0, 1.0)
    B = B + noise * rng.normal((npairs, D))
    points = np.empty((2 * npairs, D))
    points[0::2] = A
    points[1::2] = B
    pairs = tuple((2 * i, 2 * i + 1, float(gold[i])) for i in range(npairs))
    return StsBundle(pairs, EmbeddingMatrix(points, "sts", "planted/sts"))


def generate(spec: SynthSpec):
    """Run the generator named by ``spec.kind`` with ``spec.params``."""
    fn = {
        "uniform_manifold": gen_uniform_manifold,
        "gaussian_spectrum": gen_gaussian_spectrum,
        "labeled_blobs": gen_labeled_blobs,
        "retrieval_planted": gen_retrieval_planted,
        "sts_planted": gen_sts_planted,
    }[spec.kind]
    try:
        return fn(**spec.params)
    except TypeError as exc:
        raise InvalidParameterError(f"bad parameters for {spec.kind}: {exc}") from None
