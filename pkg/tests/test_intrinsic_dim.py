import numpy as np
import pytest

from embkit.errors import InsufficientDataError, InvalidParameterError, NonIdentifiableError
from embkit.intrinsic_dim import RatioSample, twonn, twonn_fit, twonn_ratios
from embkit.numerics import knn


def pareto_sample(shape, n, seed):
    # inverse CDF of F(mu) = 1 - mu^-shape
    u = np.random.default_rng(seed).uniform(size=n)
    return (1.0 - u) ** (-1.0 / shape)


class TestRatios:
    def test_collinear_kernel(self):
        nt = knn(np.array([[0.0], [1.0], [3.0]]), 2)
        assert nt.distances[1, 1] / nt.distances[1, 0] == 2.0

    def test_ratios_match_definition(self, rng):
        X = rng.normal(size=(40, 3))
        s = twonn_ratios(X)
        D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
        np.fill_diagonal(D, np.inf)
        Ds = np.sort(D, axis=1)
        np.testing.assert_allclose(s.mu, Ds[:, 1] / Ds[:, 0], rtol=1e-12)
        assert (s.mu >= 1).all() and s.kept_fraction == 1.0

    def test_all_identical(self):
        with pytest.raises(InsufficientDataError):
            twonn_ratios(np.ones((50, 4)))

    def test_too_few_points(self, rng):
        with pytest.raises(InsufficientDataError):
            twonn_ratios(rng.normal(size=(11, 3)))

    def test_duplicates_dropped_and_counted(self, rng):
        X = rng.normal(size=(30, 3))
        s = twonn_ratios(np.vstack([X, X[:5]]))
        assert s.n_duplicates == 5 and s.mu.size == 30
        assert np.isfinite(s.mu).all()
        assert s.kept_fraction == pytest.approx(30 / 35)

    def test_unit_square_matches_pareto_cdf(self):
        X = np.random.default_rng(7).uniform(size=(5000, 2))
        mu = np.sort(twonn_ratios(X).mu)
        n = mu.size
        F = 1.0 - mu ** -2.0
        ks = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
        assert ks < 0.03


class TestFit:
    def test_pareto_shape_three(self):
        est = twonn_fit(RatioSample(pareto_sample(3.0, 10_000, 1), 1.0))
        assert 2.9 <= est.id <= 3.1
        assert abs(est.id - est.mle) / est.mle < 0.10

    @pytest.mark.parametrize("shape", [1.0, 4.0, 12.0])
    def test_linear_fit_and_mle_agree(self, shape):
        est = twonn_fit(RatioSample(pareto_sample(shape, 5000, 3), 1.0))
        assert abs(est.id - est.mle) / est.mle < 0.10
        assert abs(est.id - shape) / shape < 0.10

    def test_closed_form_small_sample(self):
        mu = np.exp(np.arange(1, 21) / 10.0)[::-1]
        est = twonn_fit(RatioSample(mu, 1.0), discard_fraction=0.1)
        x = np.arange(1, 19) / 10.0
        y = -np.log(1 - np.arange(1, 19) / 20)
        assert est.n_used == 18
        assert est.id == pytest.approx(np.dot(x, y) / np.dot(x, x), rel=1e-14)
        assert est.mle == pytest.approx(20 / np.sum(np.arange(1, 21) / 10.0), rel=1e-14)

    def test_last_point_always_dropped(self):
        est = twonn_fit(RatioSample(pareto_sample(2.0, 40, 0), 1.0), discard_fraction=0.0)
        assert est.n_used == 39 and np.isfinite(est.id)

    def test_all_ones(self):
        with pytest.raises(NonIdentifiableError):
            twonn_fit(RatioSample(np.ones(100), 1.0))

    def test_grid_is_non_identifiable(self):
        g = np.arange(20.0)
        X = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
        with pytest.raises(NonIdentifiableError):
            twonn(X)

    @pytest.mark.parametrize("frac", [-0.1, 0.5, 0.9])
    def test_bad_discard(self, frac):
        with pytest.raises(InvalidParameterError):
            twonn_fit(RatioSample(pareto_sample(2.0, 100, 0), 1.0), frac)


class TestEstimator:
    def test_scale_invariance_bitwise(self):
        X = np.random.default_rng(2).uniform(size=(2000, 3))
        a, b = twonn(X), twonn(2.0 * X)
        assert a.id == b.id and a.mle == b.mle

    def test_rigid_motion(self, random_orthogonal):
        X = np.random.default_rng(5).uniform(size=(2000, 4)) @ np.diag([1, 2, 3, 4.0])
        R = random_orthogonal(4, seed=8)
        a, b = twonn(X), twonn(X @ R.T + [5.0, -3.0, 2.0, 100.0])
        assert abs(a.id - b.id) < 1e-9

    def test_five_cube_in_128(self, random_orthogonal):
        rng = np.random.default_rng(11)
        cube = rng.uniform(size=(10_000, 5))
        Q = random_orthogonal(128, seed=3)[:, :5]
        est = twonn(cube @ Q.T)
        assert 4.5 <= est.id <= 5.5
        assert not est.exceeds_ambient

    def test_exceeds_ambient_flag(self):
        mu = pareto_sample(8.0, 2000, 4)
        est = twonn_fit(RatioSample(mu, 1.0, ambient_dim=3))
        assert est.exceeds_ambient

    def test_output_fields(self, rng):
        d = twonn(rng.normal(size=(200, 3))).as_dict()
        assert set(d) >= {"id", "n_used", "discard_fraction", "mle"}
        assert d["n_used"] >= 10 and d["discard_fraction"] == 0.1
