import numpy as np
import pytest
import scipy.optimize
import scipy.special
import scipy.stats

from embkit.dataset import ClassificationBundle, ClusteringBundle, EmbeddingMatrix, RetrievalBundle, StsBundle
from embkit.errors import (
    ContractError,
    DegenerateInputError,
    InvalidParameterError,
    NonIdentifiableError,
)
from embkit.synthgen import gen_labeled_blobs
from embkit.taskeval import (
    average_ranks,
    eval_classification,
    eval_clustering,
    eval_retrieval,
    eval_sts,
    evaluate,
    kmeans,
    ndcg_at_k,
    rank_passages,
    spearman,
    train_logreg,
    v_measure,
)


def logreg_oracle(X, y, l2=1.0):
    """Minimise the same objective with L-BFGS to a very tight tolerance."""
    classes = sorted(set(y))
    C, (N, D) = len(classes), X.shape
    Y = np.zeros((N, C))
    for i, lab in enumerate(y):
        Y[i, classes.index(lab)] = 1

    def f(theta):
        W = theta[: C * D].reshape(C, D)
        b = theta[C * D :]
        Z = X @ W.T + b
        lse = scipy.special.logsumexp(Z, axis=1)
        P = np.exp(Z - lse[:, None])
        val = np.sum(lse - np.sum(Y * Z, axis=1)) + 0.5 * l2 * np.sum(W**2)
        gW = (P - Y).T @ X + l2 * W
        gb = (P - Y).sum(axis=0)
        return val, np.concatenate([gW.ravel(), gb])

    res = scipy.optimize.minimize(f, np.zeros(C * D + C), jac=True, method="L-BFGS-B",
                                  options={"gtol": 1e-10, "ftol": 1e-15, "maxiter": 100_000})
    return res.fun


class TestLogReg:
    def test_separable_1d(self):
        X = np.r_[np.full(10, -1.0), np.full(10, 1.0)][:, None]
        y = ["a"] * 10 + ["b"] * 10
        model = train_logreg(X, y)
        assert model.predict(np.array([[-2.0], [2.0]])) == ["a", "b"]
        assert model.converged

    def test_symmetric_boundary_through_origin(self, rng):
        A = rng.normal(size=(25, 2)) + [2.0, 1.0]
        X = np.vstack([A, -A])
        y = ["p"] * 25 + ["n"] * 25
        model = train_logreg(X, y, tol=1e-10, max_epochs=5000)
        # boundary w.x + c = 0 with c = b_n - b_p; passes through 0 iff c = 0
        assert abs(model.bias[0] - model.bias[1]) <= 1e-6
        np.testing.assert_allclose(model.weights[0], -model.weights[1], atol=1e-6)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_reaches_convex_optimum(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 3))
        y = [str(v) for v in rng.integers(0, 3, size=40)]
        model = train_logreg(X, y)
        assert model.objective - logreg_oracle(X, y) <= 1e-4

    def test_objective_non_increasing(self, rng):
        X = rng.normal(size=(60, 4)) * 3
        y = [str(v) for v in rng.integers(0, 4, size=60)]
        h = train_logreg(X, y).history
        assert all(b <= a for a, b in zip(h, h[1:]))

    def test_single_class(self):
        with pytest.raises(DegenerateInputError):
            train_logreg(np.ones((3, 2)), ["a", "a", "a"])

    def test_label_count(self):
        with pytest.raises(ContractError):
            train_logreg(np.ones((3, 2)), ["a", "b"])


class TestClassification:
    def test_duplicate_test_set(self):
        X = EmbeddingMatrix(np.r_[np.full(5, -1.0), np.full(5, 1.0)][:, None])
        y = ["a"] * 5 + ["b"] * 5
        assert eval_classification(ClassificationBundle(X, y, X, y)).value == 1.0

    def test_random_labels_at_chance(self):
        rng = np.random.default_rng(21)
        X = EmbeddingMatrix(rng.normal(size=(2000, 5)))
        T = EmbeddingMatrix(rng.normal(size=(2000, 5)))
        y = rng.integers(0, 2, 2000).astype(str)
        t = rng.integers(0, 2, 2000).astype(str)
        acc = eval_classification(ClassificationBundle(X, y, T, t)).value
        assert 0.45 <= acc <= 0.55

    def test_separated_blobs(self):
        cls, _ = gen_labeled_blobs(4, 16, 100, 10.0, seed=1)
        score = eval_classification(cls)
        assert score.value >= 0.99 and score.metric == "accuracy"


class TestKMeans:
    def test_two_points(self):
        r = kmeans(np.array([[0.0, 0.0], [5.0, 5.0]]), 2)
        assert sorted(r.labels.tolist()) == [0, 1] and r.inertia == 0.0

    def test_blobs_recovered(self):
        _, clu = gen_labeled_blobs(3, 8, 50, 10.0, seed=2)
        r = kmeans(clu.points.matrix, 3, seed=0)
        assert v_measure(clu.gold_labels, r.labels) == 1.0

    def test_inertia_history_non_increasing(self, rng):
        X = rng.normal(size=(300, 4))
        for restart_seed in range(3):
            h = kmeans(X, 6, seed=restart_seed, restarts=1).inertia_history
            assert all(b <= a * (1 + 1e-12) for a, b in zip(h, h[1:]))

    def test_deterministic(self, rng):
        X = rng.normal(size=(200, 3))
        a, b = kmeans(X, 4, seed=9), kmeans(X, 4, seed=9)
        assert a.labels.tolist() == b.labels.tolist() and a.inertia == b.inertia

    def test_best_restart_is_minimum(self, rng):
        X = rng.normal(size=(200, 3))
        best = kmeans(X, 5, seed=3, restarts=10)
        singles = [kmeans(X, 5, seed=3, restarts=r + 1).inertia for r in range(10)]
        assert best.inertia == min(singles)

    def test_bad_k(self):
        with pytest.raises(InvalidParameterError):
            kmeans(np.ones((3, 2)), 4)
        with pytest.raises(InvalidParameterError):
            kmeans(np.ones((3, 2)), 1)


def v_measure_oracle(gold, pred):
    """Entropies from explicit counting loops."""
    n = len(gold)
    cs, ks = sorted(set(gold)), sorted(set(pred))

    def H(counts):
        return -sum(c / n * np.log(c / n) for c in counts if c)

    joint = {(c, k): sum(1 for g, p in zip(gold, pred) if g == c and p == k) for c in cs for k in ks}
    nc = {c: sum(joint[c, k] for k in ks) for c in cs}
    nk = {k: sum(joint[c, k] for c in cs) for k in ks}
    hc, hk = H(nc.values()), H(nk.values())
    hck = -sum(v / n * np.log(v / nk[k]) for (c, k), v in joint.items() if v)
    hkc = -sum(v / n * np.log(v / nc[c]) for (c, k), v in joint.items() if v)
    h = 1.0 if hc == 0 else 1 - hck / hc
    c = 1.0 if hk == 0 else 1 - hkc / hk
    return 0.0 if h + c == 0 else 2 * h * c / (h + c)


class TestVMeasure:
    def test_identity(self):
        assert v_measure([3, 3, 1, 2], ["x", "x", "y", "z"]) == 1.0

    def test_balanced_clusters(self):
        assert v_measure([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_hand_example(self):
        assert abs(v_measure([0, 0, 1, 1], [0, 0, 1, 2]) - 0.8) <= 1e-9

    def test_symmetry_and_oracle(self, rng):
        for _ in range(20):
            g = rng.integers(0, 4, 50).tolist()
            p = rng.integers(0, 5, 50).tolist()
            v = v_measure(g, p)
            assert v == pytest.approx(v_measure(p, g), abs=1e-12)
            assert v == pytest.approx(v_measure_oracle(g, p), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            v_measure([0, 1], [0])

    def test_clustering_null(self):
        rng = np.random.default_rng(30)
        b = ClusteringBundle(EmbeddingMatrix(rng.normal(size=(1000, 4))), rng.integers(0, 2, 1000))
        assert eval_clustering(b).value <= 0.05

    def test_clustering_blobs_and_determinism(self):
        _, clu = gen_labeled_blobs(4, 16, 60, 10.0, seed=6)
        a, b = eval_clustering(clu, seed=4), eval_clustering(clu, seed=4)
        assert a.value >= 0.99 and a.value == b.value


class TestNdcg:
    def test_first(self):
        assert ndcg_at_k([1, 0, 0]) == 1.0

    def test_third(self):
        assert abs(ndcg_at_k([0, 0, 1]) - 0.5) <= 1e-9

    def test_ranks_one_and_four(self):
        assert abs(ndcg_at_k([1, 0, 0, 1]) - 0.87722) <= 1e-5
        assert ndcg_at_k([1, 0, 0, 1]) == pytest.approx(
            (1 + 1 / np.log2(5)) / (1 + 1 / np.log2(3)), abs=1e-12)

    def test_judged_beyond_cutoff(self):
        # relevant item exists but was ranked outside the top k
        assert ndcg_at_k([0] * 10, 10, [1]) == 0.0

    def test_permuting_irrelevant_tail(self, rng):
        head = [2, 0, 1, 0, 0, 3, 0, 0, 1, 0]
        tail = [0] * 20
        a = ndcg_at_k(head + tail, 10, [3, 2, 1, 1])
        b = ndcg_at_k(head + list(rng.permutation(tail)), 10, [3, 2, 1, 1])
        assert a == b

    def test_negative(self):
        with pytest.raises(ContractError):
            ndcg_at_k([1, -1])

    def test_no_relevant_mass(self):
        with pytest.raises(DegenerateInputError):
            ndcg_at_k([0, 0])


class TestRetrieval:
    def test_near_copies(self, rng):
        Q = rng.normal(size=(20, 8))
        P = Q + 1e-6 * rng.normal(size=Q.shape)
        b = RetrievalBundle(EmbeddingMatrix(Q), EmbeddingMatrix(P), [(i, i, 1) for i in range(20)])
        assert eval_retrieval(b).value == 1.0

    def test_relevant_at_rank_two(self):
        Q = np.array([[1.0, 0.0, 0.0]])
        P = np.array([[0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [-1.0, 0.0, 0.5]])
        b = RetrievalBundle(EmbeddingMatrix(Q), EmbeddingMatrix(P), [(0, 0, 1)])
        assert eval_retrieval(b).value == pytest.approx(1 / np.log2(3), abs=1e-12)

    def test_ties_by_passage_index(self):
        ranking = rank_passages(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [3.0, 0.0], [1.0, 0.0]]))
        assert ranking[0].tolist() == [1, 2, 0]

    def test_random_null(self):
        rng = np.random.default_rng(77)
        nq, npass = 2000, 100
        Q, P = rng.normal(size=(nq, 16)), rng.normal(size=(npass, 16))
        qrels = [(q, int(rng.integers(npass)), 1) for q in range(nq)]
        value = eval_retrieval(RetrievalBundle(EmbeddingMatrix(Q), EmbeddingMatrix(P), qrels)).value
        expected = sum(1 / np.log2(r + 1) for r in range(1, 11)) / npass
        assert abs(value - expected) < 0.015

    def test_row_rescaling_invariance(self, rng):
        Q, P = rng.normal(size=(30, 6)), rng.normal(size=(80, 6))
        qrels = [(q, int(rng.integers(80)), int(rng.integers(1, 3))) for q in range(30)]
        base = RetrievalBundle(EmbeddingMatrix(Q), EmbeddingMatrix(P), qrels)
        Q2 = Q * rng.uniform(0.1, 10, size=(30, 1))
        P2 = P * rng.uniform(0.1, 10, size=(80, 1))
        scaled = RetrievalBundle(EmbeddingMatrix(Q2), EmbeddingMatrix(P2), qrels)
        assert eval_retrieval(base).value == eval_retrieval(scaled).value

    def test_zero_query_skipped(self):
        Q = np.array([[1.0, 0.0], [0.0, 1.0]])
        P = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = RetrievalBundle(EmbeddingMatrix(Q), EmbeddingMatrix(P), [(0, 0, 1), (1, 1, 0)])
        s = eval_retrieval(b)
        assert s.value == 1.0 and s.n_items == 1 and s.meta["skipped_queries"] == 1

    def test_zero_norm_row(self):
        b = RetrievalBundle(EmbeddingMatrix([[1.0, 0.0]]), EmbeddingMatrix([[1.0, 0.0], [0.0, 0.0]]), [(0, 0, 1)])
        with pytest.raises(DegenerateInputError, match="passage row 1"):
            eval_retrieval(b)


class TestSpearman:
    def test_monotone(self):
        a = [0.1, 0.5, 0.7, 3.0]
        assert spearman(a, [1, 2, 3, 40]) == 1.0
        assert spearman(a, [4, 3, 2, 1]) == -1.0

    def test_tie_example(self):
        assert list(average_ranks([1, 2, 2, 3])) == [1, 2.5, 2.5, 4]
        assert abs(spearman([1, 2, 2, 3], [1, 2, 3, 4]) - 4.5 / np.sqrt(4.5 * 5)) <= 1e-12
        assert abs(spearman([1, 2, 2, 3], [1, 2, 3, 4]) - 0.94868) <= 1e-5

    def test_matches_scipy(self, rng):
        for _ in range(20):
            a = rng.integers(0, 6, 30).astype(float)
            b = rng.normal(size=30)
            assert spearman(a, b) == pytest.approx(scipy.stats.spearmanr(a, b)[0], abs=1e-12)

    def test_monotone_transform_invariance(self, rng):
        a, b = rng.normal(size=40), rng.normal(size=40)
        assert spearman(a, b) == spearman(np.exp(a), b ** 3)

    def test_constant(self):
        with pytest.raises(NonIdentifiableError):
            spearman([1, 1, 1], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(ContractError):
            spearman([1, 2], [1, 2])


class TestSts:
    def make(self, rng, n=30, D=5):
        P = rng.normal(size=(2 * n, D))
        pairs = [(2 * i, 2 * i + 1) for i in range(n)]
        cos = np.array([P[a] @ P[b] / np.linalg.norm(P[a]) / np.linalg.norm(P[b]) for a, b in pairs])
        return P, pairs, cos

    def test_gold_equals_cosine(self, rng):
        P, pairs, cos = self.make(rng)
        b = StsBundle([(a, c, s) for (a, c), s in zip(pairs, cos)], EmbeddingMatrix(P))
        assert eval_sts(b).value == 1.0

    def test_gold_monotone_transform(self, rng):
        P, pairs, cos = self.make(rng)
        b = StsBundle([(a, c, float(np.tanh(3 * s) + 5)) for (a, c), s in zip(pairs, cos)], EmbeddingMatrix(P))
        assert eval_sts(b).value == 1.0

    def test_matches_direct_formula(self, rng):
        P, pairs, cos = self.make(rng)
        gold = rng.normal(size=len(pairs))
        b = StsBundle([(a, c, float(g)) for (a, c), g in zip(pairs, gold)], EmbeddingMatrix(P))
        expected = scipy.stats.spearmanr(cos, gold)[0]
        assert abs(eval_sts(b).value - expected) <= 1e-12


def test_evaluate_dispatch():
    with pytest.raises(InvalidParameterError):
        evaluate(object())
