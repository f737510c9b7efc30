import numpy as np
import pytest

from embkit.errors import InvalidParameterError
from embkit.isotropy import isoscore
from embkit.rng import CounterRNG, orthonormal_columns
from embkit.synthgen import (
    SynthSpec,
    gen_gaussian_spectrum,
    gen_labeled_blobs,
    gen_retrieval_planted,
    gen_sts_planted,
    gen_uniform_manifold,
    generate,
)
from embkit.taskeval import eval_classification, eval_clustering, eval_retrieval, eval_sts


class TestUniformManifold:
    def test_square(self):
        X = gen_uniform_manifold(2, 2, 500, seed=1).matrix
        assert X.min() >= 0.0 and X.max() < 1.0

    def test_line_in_3d_has_rank_one(self):
        X = gen_uniform_manifold(1, 3, 200, seed=2).matrix
        eig = np.linalg.eigvalsh(np.cov(X, rowvar=False))
        assert eig[:2].max() <= 1e-9 * max(1.0, eig[2])

    def test_isometric(self):
        # rebuild the hidden cube from the same stream and compare sampled distances
        X = gen_uniform_manifold(4, 20, 300, seed=3).matrix
        cube = CounterRNG(3, "uniform_manifold", 4, 20, 300).uniform(300 * 4).reshape(300, 4)
        idx = np.random.default_rng(0).integers(0, 300, size=(500, 2))
        a = np.linalg.norm(X[idx[:, 0]] - X[idx[:, 1]], axis=1)
        b = np.linalg.norm(cube[idx[:, 0]] - cube[idx[:, 1]], axis=1)
        assert np.abs(a - b).max() <= 1e-9

    def test_deterministic(self):
        a = gen_uniform_manifold(3, 10, 50, seed=7).matrix
        b = gen_uniform_manifold(3, 10, 50, seed=7).matrix
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != gen_uniform_manifold(3, 10, 50, seed=8).matrix.tobytes()

    def test_d_above_D(self):
        with pytest.raises(InvalidParameterError):
            gen_uniform_manifold(5, 4, 10)


class TestGaussianSpectrum:
    def test_isotropic(self):
        assert isoscore(gen_gaussian_spectrum(np.ones(64), 10_000, seed=0)).isoscore >= 0.95

    def test_one_axis(self):
        s = np.zeros(16)
        s[0] = 1.0
        assert isoscore(gen_gaussian_spectrum(s, 2000, seed=0)).isoscore <= 0.02

    def test_covariance_converges(self):
        spectrum = np.array([4.0, 2.0, 1.0, 0.5, 0.25, 0.1])
        N = 40_000
        X = gen_gaussian_spectrum(spectrum, N, seed=5).matrix
        C = np.cov(X, rowvar=False)
        eig = np.sort(np.linalg.eigvalsh(C))[::-1]
        assert np.abs(eig - spectrum).max() < 5 / np.sqrt(N)

    def test_rotated_covariance_entries(self):
        # population covariance is R diag(s) R^T; R is rebuilt from the same stream
        spectrum = np.array([3.0, 1.0, 0.2])
        N = 40_000
        X = gen_gaussian_spectrum(spectrum, N, seed=9).matrix
        rng = CounterRNG(9, "gaussian_spectrum", 3, N)
        rng.normal((N, 3))
        R = orthonormal_columns(rng, 3, 3)
        pop = R @ np.diag(spectrum) @ R.T
        assert np.abs(np.cov(X, rowvar=False) - pop).max() < 5 / np.sqrt(N)

    def test_negative_entry(self):
        with pytest.raises(InvalidParameterError):
            gen_gaussian_spectrum([1.0, -0.1], 10)


class TestBlobs:
    def test_separated(self):
        cls, clu = gen_labeled_blobs(4, 16, 100, 10.0, seed=0)
        assert eval_classification(cls).value >= 0.99
        assert eval_clustering(clu).value >= 0.99

    def test_split(self):
        cls, clu = gen_labeled_blobs(3, 5, 10, 4.0, seed=0)
        assert cls.train.rows == 24 and cls.test.rows == 6 and clu.points.rows == 30
        assert sorted(set(cls.test_labels)) == ["c0", "c1", "c2"]

    def test_zero_separation_is_chance(self):
        acc, vm = [], []
        for seed in range(5):
            cls, clu = gen_labeled_blobs(2, 8, 500, 0.0, seed=seed)
            acc.append(eval_classification(cls).value)
            vm.append(eval_clustering(clu).value)
        assert 0.42 <= np.mean(acc) <= 0.58
        assert np.mean(vm) <= 0.05

    def test_signal_dims(self):
        cls, _ = gen_labeled_blobs(4, 32, 200, 10.0, seed=1, signal_dims=8)
        X = cls.train.matrix
        # per-class means differ only in the first 8 coordinates
        means = np.array([X[np.array(cls.train_labels) == c].mean(0) for c in sorted(set(cls.train_labels))])
        assert np.ptp(means[:, 8:], axis=0).max() < 0.6
        assert np.ptp(means[:, :8], axis=0).max() > 5

    def test_deterministic(self):
        a, _ = gen_labeled_blobs(3, 4, 10, 2.0, seed=3)
        b, _ = gen_labeled_blobs(3, 4, 10, 2.0, seed=3)
        assert a.train.matrix.tobytes() == b.train.matrix.tobytes()
        assert a.test_labels == b.test_labels

    def test_bad_params(self):
        with pytest.raises(InvalidParameterError):
            gen_labeled_blobs(1, 4, 10, 2.0)
        with pytest.raises(InvalidParameterError):
            gen_labeled_blobs(2, 4, 1, 2.0)


class TestPlanted:
    def test_noise_free(self):
        assert eval_retrieval(gen_retrieval_planted(50, 300, 16, 0.0, seed=0)).value == 1.0
        assert eval_sts(gen_sts_planted(100, 16, 0.0, seed=0)).value == pytest.approx(1.0, abs=1e-12)

    def test_gold_is_pre_noise_cosine(self):
        b = gen_sts_planted(20, 8, 0.0, seed=4)
        P = b.points.matrix
        for a, c, s in b.pairs:
            cos = P[a] @ P[c] / np.linalg.norm(P[a]) / np.linalg.norm(P[c])
            assert s == pytest.approx(cos, abs=1e-12)

    def test_relevant_passage_location(self):
        b = gen_retrieval_planted(10, 40, 6, 0.0, seed=2)
        for q, p, r in b.qrels:
            np.testing.assert_array_equal(b.passages.matrix[p], b.queries.matrix[q])

    def test_noise_sweep_monotone(self):
        ret, sts = [], []
        for noise in (0.0, 0.5, 2.0):
            ret.append(np.mean([eval_retrieval(gen_retrieval_planted(100, 500, 16, noise, s)).value
                                for s in range(5)]))
            sts.append(np.mean([eval_sts(gen_sts_planted(200, 16, noise, s)).value for s in range(5)]))
        assert ret[0] > ret[1] > ret[2], ret
        assert sts[0] > sts[1] > sts[2], sts

    def test_bad_sizes(self):
        with pytest.raises(InvalidParameterError):
            gen_retrieval_planted(5, 1, 4, 0.1)
        with pytest.raises(InvalidParameterError):
            gen_sts_planted(2, 4, 0.1)


class TestGenerate:
    def test_dispatch(self):
        emb = generate(SynthSpec("uniform_manifold", {"d": 2, "D": 3, "N": 10, "seed": 1}))
        assert emb.matrix.tobytes() == gen_uniform_manifold(2, 3, 10, 1).matrix.tobytes()

    def test_unknown_kind(self):
        with pytest.raises(InvalidParameterError):
            SynthSpec("spiral")

    def test_bad_params(self):
        with pytest.raises(InvalidParameterError):
            generate(SynthSpec("uniform_manifold", {"dims": 3}))
