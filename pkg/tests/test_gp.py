import numpy as np
import pytest
from scipy import stats

from postsum import gp
from postsum.core import Dataset, PredictiveLocations
from postsum.gp import (GpHyperparameters, GpNumericalError, GpPosterior, kernel_matrix,
                        log_marginal_likelihood, optimize_hyperparameters)


def _toy(n=30, p=2, seed=0):
    r = np.random.default_rng(seed)
    X = r.uniform(-2, 2, (n, p))
    y = np.sin(X[:, 0]) + 0.3 * X[:, -1] + 0.2 * r.standard_normal(n)
    return Dataset(X, y, [f"x{j + 1}" for j in range(p)])


def _hyper(p, seed):
    r = np.random.default_rng(seed)
    return GpHyperparameters(tau2=r.uniform(0.3, 2), v=r.uniform(0.5, 4, p),
                             a=r.uniform(0.01, 0.3, p), sigma2=r.uniform(0.05, 0.5))


def _theta(h):
    return np.concatenate([[np.log(h.tau2)], np.log(h.v), np.log(h.a), [np.log(h.sigma2)]])


def _from_theta(t, p):
    return GpHyperparameters(np.exp(t[0]), np.exp(t[1:1 + p]), np.exp(t[1 + p:1 + 2 * p]),
                             np.exp(t[-1]))


class TestKernel:
    def test_hand_values(self):
        h = GpHyperparameters(tau2=2.0, v=[4.0], a=[0.5], sigma2=1.0)
        K = kernel_matrix([[0.0], [2.0]], [[0.0], [2.0]], h)
        expect = np.array([[2.0, 2 * np.exp(-1.0)], [2 * np.exp(-1.0), 2.0 + 0.5 * 4]])
        np.testing.assert_allclose(K, expect)

    def test_symmetric_psd(self):
        d = _toy()
        K = kernel_matrix(d.X, d.X, _hyper(2, 1))
        np.testing.assert_allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-10

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            GpHyperparameters(tau2=1.0, v=[1.0, -1.0], a=[0.0, 0.0], sigma2=1.0)
        with pytest.raises(ValueError):
            GpHyperparameters(tau2=1.0, v=[1.0], a=[0.0, 0.0], sigma2=1.0)
        with pytest.raises(ValueError):
            GpHyperparameters(tau2=0.0, v=[1.0], a=[0.0], sigma2=1.0)

    def test_dict_roundtrip(self):
        h = _hyper(3, 2)
        back = GpHyperparameters.from_dict(h.to_dict())
        np.testing.assert_array_equal(back.v, h.v)
        assert back.jitter == h.jitter


class TestMarginalLikelihood:
    def test_matches_multivariate_normal(self):
        d = _toy()
        h = _hyper(2, 3)
        K = kernel_matrix(d.X, d.X, h) + (h.sigma2 + h.jitter) * np.eye(d.n)
        ref = stats.multivariate_normal(np.zeros(d.n), K).logpdf(d.y - d.y.mean())
        assert log_marginal_likelihood(d, h) == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_central_differences(self, seed):
        d = _toy(n=25, p=2, seed=seed)
        h = _hyper(2, 10 + seed)
        _, g = log_marginal_likelihood(d, h, return_grad=True)
        t = _theta(h)
        fd = np.empty_like(t)
        eps = 1e-5
        for i in range(t.size):
            e = np.zeros_like(t)
            e[i] = eps
            fd[i] = (log_marginal_likelihood(d, _from_theta(t + e, 2))
                     - log_marginal_likelihood(d, _from_theta(t - e, 2))) / (2 * eps)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5

    def test_jitter_escalates_for_duplicates(self):
        X = np.repeat(np.linspace(0, 1, 5)[:, None], 4, axis=0)
        d = Dataset(X, np.sin(3 * X[:, 0]), ["x"])
        h = GpHyperparameters(tau2=1.0, v=[1e4], a=[0.0], sigma2=1e-300, jitter=1e-300)
        L, jit = gp._cholesky_escalating(kernel_matrix(X, X, h), h)
        assert jit > h.jitter
        assert np.isfinite(log_marginal_likelihood(d, h))

    def test_unfactorizable_raises(self):
        h = GpHyperparameters(tau2=1.0, v=[1.0], a=[0.0], sigma2=1.0)
        with pytest.raises(GpNumericalError, match="condition"):
            gp._cholesky_escalating(-np.eye(3), h)


class TestOptimize:
    def test_improves_and_recovers_noise(self):
        r = np.random.default_rng(5)
        X = r.uniform(-2, 2, (150, 1))
        y = np.sin(2 * X[:, 0]) + 0.3 * r.standard_normal(150)
        d = Dataset(X, y, ["x"])
        init = gp.default_hyperparameters(d, linear=False)
        h = optimize_hyperparameters(d, init)
        assert log_marginal_likelihood(d, h) >= log_marginal_likelihood(d, init)
        assert 0.05 < h.sigma2 < 0.15
        np.testing.assert_array_equal(h.a, 0.0)

    def test_linear_weight_stays_free(self):
        r = np.random.default_rng(6)
        X = r.uniform(-2, 2, (80, 2))
        d = Dataset(X, 2 * X[:, 0] + 0.1 * r.standard_normal(80), ["a", "b"])
        h = gp.fit_gp(d, linear=True)
        assert h.a[0] > 0 and h.sigma2 < 0.05

    def test_collapsed_noise_warns(self):
        # a noiseless smooth target drives the noise variance to its floor
        X = np.linspace(-2, 2, 30)[:, None]
        with pytest.warns(UserWarning, match="noise variance collapsed"):
            gp.fit_gp(Dataset(X, np.sin(X[:, 0]), ["x"]), linear=False, n_starts=1)


class TestGibbs:
    def test_two_point_posterior_matches_closed_form(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([0.7, -0.4])
        d = Dataset(X, y, ["x"])
        h = GpHyperparameters(tau2=1.5, v=[2.0], a=[0.0], sigma2=0.3)
        post = GpPosterior(d, h).run(40000, seed=1, burn_in=0, update_sigma2=False)
        F = post.f_at_data()
        K = kernel_matrix(X, X, h) + h.jitter * np.eye(2)
        yc = y - y.mean()
        A = K @ np.linalg.inv(K + h.sigma2 * np.eye(2))
        mean = A @ yc + y.mean()
        cov = K - A @ K
        se = np.sqrt(np.diag(cov) / F.shape[0])
        assert np.all(np.abs(F.mean(axis=0) - mean) < 4 * se)
        np.testing.assert_allclose(np.cov(F, rowvar=False), cov, rtol=0.05, atol=1e-3)

    def test_sigma2_inverse_gamma_limit(self):
        # with a negligible prior on f the sigma2 conditional is IG(n/2, |y|^2/2)
        r = np.random.default_rng(2)
        X = r.standard_normal((20, 1))
        y = r.standard_normal(20)
        d = Dataset(X, y, ["x"])
        h = GpHyperparameters(tau2=1e-12, v=[1.0], a=[0.0], sigma2=1.0, jitter=1e-14)
        post = GpPosterior(d, h).run(20000, seed=0, burn_in=10)
        ss = np.sum((y - y.mean()) ** 2)
        expect = ss / (20 - 2)
        se = expect * np.sqrt(2 / (20 - 4)) / np.sqrt(20000)
        assert abs(post.sigma2_draws.mean() - expect) < 5 * se

    def test_seeded_and_chain_split(self):
        d = _toy()
        h = _hyper(2, 0)
        a = GpPosterior(d, h).run(50, seed=9).f_at_data()
        b = GpPosterior(d, h).run(50, seed=9).f_at_data()
        np.testing.assert_array_equal(a, b)
        c = GpPosterior(d, h).run(51, seed=9, chains=3)
        assert c.f_at_data().shape == (51, d.n)

    def test_rejects_single_draw(self):
        with pytest.raises(ValueError):
            GpPosterior(_toy(), _hyper(2, 0)).run(1, seed=0)

    def test_draws_before_run(self):
        with pytest.raises(RuntimeError):
            GpPosterior(_toy(), _hyper(2, 0)).f_at_data()

    def test_extension_agrees_at_training_points(self):
        d = _toy(n=20)
        h = _hyper(2, 4)
        post = GpPosterior(d, h).run(200, seed=3)
        F = post.f_at_data()
        G = post.f_at(d.X, seed=5)
        assert np.max(np.abs(F - G)) < 1e-3

    def test_extension_conditional_moments(self):
        d = _toy(n=15)
        h = GpHyperparameters(tau2=1.0, v=[1.0, 1.0], a=[0.0, 0.0], sigma2=0.1)
        post = GpPosterior(d, h).run(20000, seed=0, burn_in=0, update_sigma2=False)
        xs = np.array([[0.3, -0.2], [3.0, 3.0]])
        G = post.f_at(xs, seed=1)
        Kxx = kernel_matrix(d.X, d.X, h) + h.jitter * np.eye(d.n)
        ks = kernel_matrix(xs, d.X, h)
        A = np.linalg.inv(Kxx + h.sigma2 * np.eye(d.n))
        mean = ks @ A @ (d.y - d.y.mean()) + d.y.mean()
        var = np.diag(kernel_matrix(xs, xs, h) - ks @ A @ ks.T)
        se = np.sqrt(var / G.shape[0])
        assert np.all(np.abs(G.mean(axis=0) - mean) < 5 * se)
        np.testing.assert_allclose(G.var(axis=0), var, rtol=0.05)

    def test_draws_object(self):
        d = _toy()
        post = GpPosterior(d, _hyper(2, 0)).run(20, seed=0)
        dr = post.draws()
        assert dr.model_tag == "gp" and dr.M == 20 and dr.n == d.n
        tgt = PredictiveLocations(np.zeros((3, 2)), origin="synthetic")
        assert post.draws(tgt, locations_id="t").n == 3

    def test_sample_posterior_meta(self):
        d = _toy()
        dr = gp.sample_posterior(d, _hyper(2, 0), M=10, seed=2, burn_in=5)
        assert dr.meta["chain"]["burn_in"] == 5
        assert "hyperparameters" in dr.meta
