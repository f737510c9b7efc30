"""Downstream task scores on (possibly reduced) embeddings.

Classification: multinomial logistic regression, test accuracy.
Clustering: k-means with k = number of gold classes, V-measure.
Retrieval: cosine ranking of all passages, mean nDCG@10.
STS: Spearman correlation of pair cosines with gold scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ClassificationBundle, ClusteringBundle, RetrievalBundle, StsBundle
from .errors import (
    ContractError,
    DegenerateInputError,
    InvalidParameterError,
    NonIdentifiableError,
)
from .numerics import as_matrix, normalize_rows
from .rng import CounterRNG

NDCG_K = 10


@dataclass(frozen=True)
class TaskScore:
    task: str
    metric: str
    value: float
    n_items: int
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "task": self.task,
            "metric": self.metric,
            "value": self.value,
            "n_items": self.n_items,
            "meta": dict(self.meta),
        }


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True, eq=False)
class LogRegModel:
    weights: np.ndarray
    bias: np.ndarray
    classes: tuple
    converged: bool = False
    epochs: int = 0
    objective: float = float("nan")
    history: tuple = ()

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights.T + self.bias

    def predict_index(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return [self.classes[i] for i in self.predict_index(X)]


def _logreg_objective(W, b, X, Y, l2):
    Z = X @ W.T + b
    Z = Z - Z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(Z).sum(axis=1))
    loss = float(np.sum(log_norm - np.sum(Z * Y, axis=1)))
    return loss + 0.5 * l2 * float(np.sum(W * W)), Z, log_norm


def _logreg_gradient(W, X, Y, l2, Z, log_norm):
    R = np.exp(Z - log_norm[:, None]) - Y
    return R.T @ X + l2 * W, R.sum(axis=0)


def train_logreg(X, y, l2=1.0, tol=1e-6, max_epochs=1000) -> LogRegModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Minimises the summed cross-entropy plus (l2/2)||W||_F^2 (bias is not
    penalised). Each epoch takes one step along the negative gradient; the
    trial step length is the Barzilai-Borwein estimate and is halved until
    the Armijo condition holds, so the objective never increases. Stops when
    the largest gradient entry is below ``tol``.
    """
    X = as_matrix(X)
    labels = np.asarray([str(v) for v in y])
    if labels.size != X.shape[0]:
        raise ContractError(f"{labels.size} labels for {X.shape[0]} rows")
    classes, yi = np.unique(labels, return_inverse=True)
    C = classes.size
    if C < 2:
        raise DegenerateInputError("logistic regression needs at least 2 classes")
    N, D = X.shape
    Y = np.zeros((N, C))
    Y[np.arange(N), yi] = 1.0
    W = np.zeros((C, D))
    b = np.zeros(C)
    f, Z, log_norm = _logreg_objective(W, b, X, Y, l2)
    gW, gb = _logreg_gradient(W, X, Y, l2, Z, log_norm)
    history = [f]
    step = 1.0 / max(1.0, float(np.sum(X * X)) + l2)
    converged = False
    epochs = 0
    while epochs < max_epochs:
        gnorm_inf = max(float(np.abs(gW).max()), float(np.abs(gb).max()))
        if gnorm_inf < tol:
            converged = True
            break
        g2 = float(np.sum(gW * gW) + np.sum(gb * gb))
        t = step
        while True:
            W_new, b_new = W - t * gW, b - t * gb
            f_new, Z_new, ln_new = _logreg_objective(W_new, b_new, X, Y, l2)
            if f_new <= f - 1e-4 * t * g2:
                break
            t *= 0.5
            if t < 1e-30:
                break
        if t < 1e-30 or f_new > f:
            break
        gW_new, gb_new = _logreg_gradient(W_new, X, Y, l2, Z_new, ln_new)
        sW, sb = W_new - W, b_new - b
        dW, db = gW_new - gW, gb_new - gb
        sy = float(np.sum(sW * dW) + np.sum(sb * db))
        ss = float(np.sum(sW * sW) + np.sum(sb * sb))
        step = ss / sy if sy > 0 else 2.0 * t
        W, b, f, gW, gb = W_new, b_new, f_new, gW_new, gb_new
        history.append(f)
        epochs += 1
    else:
        gnorm_inf = max(float(np.abs(gW).max()), float(np.abs(gb).max()))
        converged = gnorm_inf < tol
    return LogRegModel(W, b, tuple(classes.tolist()), converged, epochs, f, tuple(history))


def eval_classification(b: ClassificationBundle, l2=1.0, tol=1e-6, max_epochs=1000) -> TaskScore:
    model = train_logreg(b.train.matrix, b.train_labels, l2=l2, tol=tol, max_epochs=max_epochs)
    pred = model.predict(b.test.matrix)
    correct = sum(p == t for p, t in zip(pred, b.test_labels))
    return TaskScore(
        "classification",
        "accuracy",
        correct / len(b.test_labels),
        len(b.test_labels),
        {"converged": model.converged, "epochs": model.epochs, "l2": l2, "tol": tol},
    )


# ---------------------------------------------------------------------------
# clustering


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: tuple
    restart: int = 0


def _sq_dists(X, centers, x_sq):
    d2 = x_sq[:, None] - 2.0 * (X @ centers.T) + np.einsum("ij,ij->i", centers, centers)[None, :]
    return np.maximum(d2, 0.0)


def _kmeans_pp(X, k, rng, x_sq):
    N = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.below(N)]
    closest = _sq_dists(X, centers[:1], x_sq)[:, 0]
    for j in range(1, k):
        centers[j] = X[rng.choice_weighted(closest)]
        closest = np.minimum(closest, _sq_dists(X, centers[j : j + 1], x_sq)[:, 0])
    return centers


def _lloyd(X, centers, x_sq, max_iter):
    history = []
    labels = None
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, centers, x_sq)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(X.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
    return labels, centers, history[-1], it, tuple(history)


def kmeans(X, k, seed=0, restarts=10, max_iter=300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; the restart with lowest inertia wins.

    Restart r draws from the stream ``(seed, "kmeans", r)``, so the result is
    a pure function of the arguments. Ties in assignment go to the lower
    cluster index and ties in inertia to the earlier restart.
    """
    X = as_matrix(X)
    N = X.shape[0]
    if k < 2:
        raise InvalidParameterError(f"k must be >= 2, got {k}")
    if k > N:
        raise InvalidParameterError(f"k={k} exceeds the number of points {N}")
    x_sq = np.einsum("ij,ij->i", X, X)
    best = None
    for r in range(max(1, restarts)):
        rng = CounterRNG(seed, "kmeans", r)
        labels, centers, inertia, n_iter, hist = _lloyd(X, _kmeans_pp(X, k, rng, x_sq), x_sq, max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia, n_iter, hist, r)
    return best


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def v_measure(gold, pred, beta=1.0) -> float:
    """Weighted harmonic mean of homogeneity and completeness (natural-log entropies)."""
    gold = np.asarray([str(g) for g in gold])
    pred = np.asarray([str(p) for p in pred])
    if gold.size != pred.size:
        raise ContractError(f"length mismatch: {gold.size} gold vs {pred.size} predicted")
    if gold.size == 0:
        raise ContractError("v_measure needs at least one item")
    _, gi = np.unique(gold, return_inverse=True)
    _, pi = np.unique(pred, return_inverse=True)
    table = np.zeros((gi.max() + 1, pi.max() + 1))
    np.add.at(table, (gi, pi), 1.0)
    n = table.sum()
    h_c = _entropy(table.sum(axis=1))
    h_k = _entropy(table.sum(axis=0))
    nz = table > 0
    joint = table[nz] / n
    col = np.broadcast_to(table.sum(axis=0), table.shape)[nz] / n
    row = np.broadcast_to(table.sum(axis=1)[:, None], table.shape)[nz] / n
    h_c_given_k = float(-np.sum(joint * np.log(joint / col)))
    h_k_given_c = float(-np.sum(joint * np.log(joint / row)))
    homogeneity = 1.0 if h_c == 0.0 else 1.0 - h_c_given_k / h_c
    completeness = 1.0 if h_k == 0.0 else 1.0 - h_k_given_c / h_k
    denom = beta * homogeneity + completeness
    if denom == 0.0:
        return 0.0
    return float(np.clip((1.0 + beta) * homogeneity * completeness / denom, 0.0, 1.0))


def eval_clustering(b: ClusteringBundle, seed=0, restarts=10) -> TaskScore:
    k = len(set(b.gold_labels))
    result = kmeans(b.points.matrix, k, seed=seed, restarts=restarts)
    value = v_measure(b.gold_labels, result.labels)
    return TaskScore(
        "clustering",
        "v_measure",
        value,
        b.points.rows,
        {"k": k, "seed": seed, "restarts": restarts, "inertia": result.inertia},
    )


# ---------------------------------------------------------------------------
# retrieval


def ndcg_at_k(ranked_relevances, k=NDCG_K, all_judged_relevances=None) -> float:
    """nDCG@k with raw-grade gains and a 1/log2(rank+1) discount.

    The ideal ranking is built from ``all_judged_relevances`` (defaults to
    the ranked list itself). Raises when there is no relevant mass.
    """
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    ranked = np.asarray(ranked_relevances, dtype=np.float64)
    judged = ranked if all_judged_relevances is None else np.asarray(all_judged_relevances, dtype=np.float64)
    if (ranked < 0).any() or (judged < 0).any():
        raise ContractError("relevance grades must be non-negative")
    discount = 1.0 / np.log2(np.arange(2, k + 2))
    top = ranked[:k]
    dcg = float(np.dot(top, discount[: top.size]))
    ideal = np.sort(judged)[::-1][:k]
    idcg = float(np.dot(ideal, discount[: ideal.size]))
    if idcg == 0.0:
        raise DegenerateInputError("no relevant items; nDCG is undefined")
    return dcg / idcg


def rank_passages(queries, passages, block=256) -> np.ndarray:
    """Passage indices for each query, best cosine first, ties by lower index."""
    Q = normalize_rows(np.asarray(queries, dtype=np.float64), "query")
    P = normalize_rows(np.asarray(passages, dtype=np.float64), "passage")
    out = np.empty((Q.shape[0], P.shape[0]), dtype=np.int64)
    for s in range(0, Q.shape[0], block):
        S = Q[s : s + block] @ P.T
        out[s : s + block] = np.argsort(-S, axis=1, kind="stable")
    return out


def eval_retrieval(b: RetrievalBundle, k=NDCG_K) -> TaskScore:
    judgments = {}
    for q, p, r in b.qrels:
        judgments.setdefault(q, {})[p] = r
    ranking = rank_passages(b.queries.matrix, b.passages.matrix)
    scores, skipped = [], 0
    for q in range(b.queries.rows):
        rels = judgments.get(q, {})
        if sum(rels.values()) == 0:
            skipped += 1
            continue
        ranked = [rels.get(int(p), 0) for p in ranking[q, :k]]
        scores.append(ndcg_at_k(ranked, k, list(rels.values())))
    if not scores:
        raise DegenerateInputError("no query has a relevant passage")
    return TaskScore(
        "retrieval",
        f"ndcg_at_{k}",
        float(np.mean(scores)),
        len(scores),
        {"skipped_queries": skipped, "gain": "raw", "discount": "log2(rank+1)"},
    )


# ---------------------------------------------------------------------------
# STS


def average_ranks(values) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sorted_v = v[order]
    ranks = np.empty(v.size)
    start = 0
    while start < v.size:
        stop = start + 1
        while stop < v.size and sorted_v[stop] == sorted_v[start]:
            stop += 1
        ranks[order[start:stop]] = (start + 1 + stop) / 2.0
        start = stop
    return ranks


def spearman(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"spearman needs equal-length 1-D inputs, got {a.shape} and {b.shape}")
    if a.size < 3:
        raise ContractError(f"spearman needs at least 3 items, got {a.size}")
    if np.unique(a).size < 2 or np.unique(b).size < 2:
        raise NonIdentifiableError("spearman is undefined for a constant input")
    ra = average_ranks(a)
    rb = average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    rho = float(np.dot(ra, rb) / np.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))
    return float(np.clip(rho, -1.0, 1.0))


def pair_cosines(points, pairs) -> np.ndarray:
    P = normalize_rows(np.asarray(points, dtype=np.float64), "point")
    a = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    b = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    return np.clip(np.einsum("ij,ij->i", P[a], P[b]), -1.0, 1.0)


def eval_sts(b: StsBundle) -> TaskScore:
    sims = pair_cosines(b.points.matrix, b.pairs)
    gold = [s for _, _, s in b.pairs]
    return TaskScore("sts", "spearman", spearman(sims, gold), len(b.pairs))


def evaluate(bundle, seed=0) -> TaskScore:
    """Dispatch on the bundle type."""
    if isinstance(bundle, ClassificationBundle):
        return eval_classification(bundle)
    if isinstance(bundle, ClusteringBundle):
        return eval_clustering(bundle, seed=seed)
    if isinstance(bundle, RetrievalBundle):
        return eval_retrieval(bundle)
    if isinstance(bundle, StsBundle):
        return eval_sts(bundle)
    raise InvalidParameterError(f"not a task bundle: {type(bundle).__name__}")
