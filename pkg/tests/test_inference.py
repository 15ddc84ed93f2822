import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statfem.errors import CholeskyError, StatFEMError
from statfem.inference import (
    EstimationOptions,
    GaussianField,
    Hyperparameters,
    MarginalLikelihood,
    ObservationSet,
    default_length_bounds,
    estimate_hyperparameters,
    generate_observations,
    gradient_check,
    jittered_cholesky,
    kernel_matrix,
    log_kernel_derivatives,
    marginal_covariance,
    neg_log_marginal,
    neg_log_marginal_grad,
    posterior_update,
    random_hyperparameters,
    rmse,
    true_response,
)


def full_rank_prior(n=15, seed=0):
    """Smooth prior on ``n`` points of [0, 1] with a full-rank covariance."""
    x = np.linspace(0.0, 1.0, n)
    cov = kernel_matrix(x, 0.3, 0.2) + 1e-3 * np.eye(n)
    return x, GaussianField(1.0 + np.sin(3 * x), cov)


def direct_observations(prior, x, Y, sigma_e):
    return ObservationSet(x, np.eye(x.size), Y, sigma_e)


def explicit_theta(prior, obs, w):
    """Sum of per-reading Gaussian log densities using an explicit inverse."""
    rho, sd, ld = w
    Sigma = (kernel_matrix(obs.coords, sd, ld) + obs.sigma_e**2 * np.eye(obs.n_y)
             + rho**2 * obs.H @ prior.cov @ obs.H.T)
    Si = np.linalg.inv(Sigma)
    _, logdet = np.linalg.slogdet(Sigma)
    total = 0.0
    for y in obs.Y.T:
        r = y - rho * obs.H @ prior.mean
        total += 0.5 * (r @ Si @ r + logdet + obs.n_y * math.log(2 * math.pi))
    return total


@pytest.fixture
def setup():
    x, prior = full_rank_prior()
    w = Hyperparameters(0.8, 0.1, 0.25)
    truth = lambda rng, n: rng.multivariate_normal(prior.mean, prior.cov, size=n).T
    obs = generate_observations(truth, w, 0.02, x, 30, seed=1, H=np.eye(x.size))
    return prior, obs, w


class TestKernel:
    def test_same_point_and_one_length(self):
        K = kernel_matrix(np.array([[0.0], [0.0], [0.5]]), 2.0, 0.5)
        assert K[0, 1] == pytest.approx(4.0)
        assert K[0, 2] == pytest.approx(4.0 * math.exp(-0.5))

    def test_two_dimensional_distance(self):
        K = kernel_matrix(np.array([[0.0, 0.0], [3.0, 4.0]]), 1.0, 5.0)
        assert K[0, 1] == pytest.approx(math.exp(-0.5))

    def test_zero_amplitude(self):
        assert np.all(kernel_matrix(np.linspace(0, 1, 4), 0.0, 1.0) == 0.0)

    def test_component_blocks(self):
        K = kernel_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0, 1.0, n_components=2)
        assert K.shape == (4, 4)
        assert K[0, 1] == 0.0 and K[0, 3] == 0.0
        assert K[0, 2] == pytest.approx(math.exp(-0.5))
        assert K[1, 3] == pytest.approx(math.exp(-0.5))

    def test_nonpositive_length(self):
        with pytest.raises(ValueError):
            kernel_matrix(np.zeros(2), 1.0, 0.0)

    @settings(max_examples=30, deadline=None)
    @given(ls=st.floats(-2.0, 1.0), ll=st.floats(-2.0, 1.0), seed=st.integers(0, 1000))
    def test_log_derivatives_match_finite_differences(self, ls, ll, seed):
        x = np.random.default_rng(seed).uniform(0, 2, (6, 2))
        dS, dL = log_kernel_derivatives(x, ls, ll)
        h = 1e-6
        K = lambda a, b: kernel_matrix(x, math.exp(a), math.exp(b))
        fd_s = (K(ls + h, ll) - K(ls - h, ll)) / (2 * h)
        fd_l = (K(ls, ll + h) - K(ls, ll - h)) / (2 * h)
        scale = math.exp(2 * ls)
        np.testing.assert_allclose(dS, fd_s, atol=1e-7 * scale)
        np.testing.assert_allclose(dL, fd_l, atol=1e-7 * scale)


class TestMarginalLikelihood:
    def test_covariance_special_cases(self):
        x, prior = full_rank_prior(6)
        obs = direct_observations(prior, x, np.zeros(6), 0.3)
        np.testing.assert_allclose(marginal_covariance(prior, obs, (0.0, 0.0, 1.0)), 0.09 * np.eye(6))
        obs0 = direct_observations(prior, x, np.zeros(6), 0.0)
        np.testing.assert_allclose(marginal_covariance(prior, obs0, (0.0, 0.5, 0.2)),
                                   kernel_matrix(x, 0.5, 0.2))
        np.testing.assert_allclose(marginal_covariance(prior, obs0, (2.0, 0.0, 0.2)), 4.0 * prior.cov)

    def test_scalar_closed_form(self):
        prior = GaussianField(np.array([2.0]), np.array([[0.5]]))
        obs = ObservationSet([[0.0]], np.array([[1.0]]), [[3.1]], 0.2)
        rho, sd = 1.3, 0.4
        var = sd**2 + 0.2**2 + rho**2 * 0.5
        expected = 0.5 * math.log(2 * math.pi * var) + (3.1 - rho * 2.0) ** 2 / (2 * var)
        assert neg_log_marginal((rho, sd, 1.0), prior, obs) == pytest.approx(expected, rel=1e-13)

    def test_zero_residual(self):
        x, prior = full_rank_prior(8)
        rho = 0.9
        Y = np.repeat((rho * prior.mean)[:, None], 3, axis=1)
        obs = direct_observations(prior, x, Y, 0.05)
        Sigma = marginal_covariance(prior, obs, (rho, 0.1, 0.3))
        expected = 1.5 * (8 * math.log(2 * math.pi) + np.linalg.slogdet(Sigma)[1])
        assert neg_log_marginal((rho, 0.1, 0.3), prior, obs) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), n_y=st.integers(1, 20), n_o=st.integers(1, 5))
    def test_matches_explicit_inverse(self, seed, n_y, n_o):
        rng = np.random.default_rng(seed)
        x, prior = full_rank_prior(n_y + 2, seed)
        H = np.eye(n_y + 2)[rng.permutation(n_y + 2)[:n_y]]
        obs = ObservationSet(x[H.argmax(axis=1)], H, rng.normal(1.0, 0.3, (n_y, n_o)), 0.05)
        w = (rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5))
        assert neg_log_marginal(w, prior, obs) == pytest.approx(explicit_theta(prior, obs, w), rel=1e-10)

    def test_readings_factorize(self, setup):
        prior, obs, w = setup
        part = obs.subset(3)
        total = neg_log_marginal(w, prior, part)
        single = sum(neg_log_marginal(w, prior, ObservationSet(part.coords, part.H, part.Y[:, [i]],
                                                                part.sigma_e)) for i in range(3))
        assert total == pytest.approx(single, rel=1e-12)

    def test_gradient_at_random_points(self, setup):
        prior, obs, w = setup
        lik = MarginalLikelihood(prior, obs)
        errs = gradient_check(lik, random_hyperparameters(w, 20, seed=3))
        assert errs.max() <= 1e-5

    def test_function_wrappers_agree(self, setup):
        prior, obs, w = setup
        f, g = MarginalLikelihood(prior, obs).value_and_grad(w)
        assert f == pytest.approx(neg_log_marginal(w, prior, obs))
        np.testing.assert_allclose(g, neg_log_marginal_grad(w, prior, obs))

    def test_indefinite_covariance_raises(self):
        with pytest.raises(CholeskyError) as info:
            jittered_cholesky(np.diag([1.0, -1.0]))
        assert info.value.min_eigenvalue == pytest.approx(-1.0)

    def test_jitter_only_when_needed(self):
        _, jit = jittered_cholesky(np.eye(3))
        assert jit == 0.0
        v = np.array([1.0, 2.0, 3.0])
        L, jit = jittered_cholesky(np.outer(v, v))
        assert 0.0 < jit <= 1e-6 * np.mean(v**2)
        assert np.allclose(L @ L.T, np.outer(v, v), atol=1e-5)


class TestEstimation:
    def test_recovers_generating_values(self):
        x, prior = full_rank_prior(25)
        w = Hyperparameters(0.8, 0.1, 0.15)
        truth = lambda rng, n: rng.multivariate_normal(prior.mean, prior.cov, size=n).T
        obs = generate_observations(truth, w, 0.01, x, 2000, seed=2, H=np.eye(x.size))
        res = estimate_hyperparameters(prior, obs)
        est = np.array(res.hyperparameters.as_tuple())
        np.testing.assert_allclose(est, w.as_tuple(), rtol=0.1)
        assert res.converged

    def test_optimum_is_stationary(self, setup):
        prior, obs, _ = setup
        res = estimate_hyperparameters(prior, obs)
        lo, hi = default_length_bounds(obs.coords)
        assert lo < res.hyperparameters.l_d < hi
        _, g = MarginalLikelihood(prior, obs).value_and_grad(res.hyperparameters)
        assert np.max(np.abs(g)) < 1e-4 * obs.n_o

    def test_beats_generating_values(self, setup):
        prior, obs, w = setup
        res = estimate_hyperparameters(prior, obs)
        assert res.neg_log_marginal <= neg_log_marginal(w, prior, obs) + 1e-9

    def test_threads_do_not_change_results(self, setup):
        prior, obs, _ = setup
        a = estimate_hyperparameters(prior, obs, opts=EstimationOptions(threads=1))
        b = estimate_hyperparameters(prior, obs, opts=EstimationOptions(threads=3))
        assert a.hyperparameters == b.hyperparameters

    def test_summary_fields(self, setup):
        prior, obs, _ = setup
        res = estimate_hyperparameters(prior, obs, opts=EstimationOptions(n_starts=3))
        assert set(res.to_dict()) == {"rho", "sigma_d", "l_d", "neg_log_marginal", "iterations", "converged"}
        assert len(res.starts) == 3

    def test_non_finite_data_raises(self, setup):
        prior, obs, _ = setup
        Y = obs.Y.copy()
        Y[0, 0] = np.nan
        bad = ObservationSet(obs.coords, obs.H, Y, obs.sigma_e)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(StatFEMError):
                estimate_hyperparameters(prior, bad)


class TestPosterior:
    def test_zero_innovation_is_fixed_point(self):
        x, prior = full_rank_prior(10)
        rho = 1.2
        obs = direct_observations(prior, x, np.repeat((rho * prior.mean)[:, None], 4, axis=1), 0.05)
        for method in ("dense", "sensor"):
            post = posterior_update(prior, obs, (rho, 0.1, 0.2), method=method)
            np.testing.assert_allclose(post.mean, rho * prior.mean, atol=1e-10)

    def test_noiseless_limit_interpolates(self):
        x, prior = full_rank_prior(10)
        Y = np.random.default_rng(0).normal(1.0, 0.2, (10, 50))
        obs = direct_observations(prior, x, Y, 1e-6)
        post = posterior_update(prior, obs, (1.0, 0.0, 0.2))
        np.testing.assert_allclose(post.mean, Y.mean(axis=1), atol=1e-8)
        assert np.max(post.std) < 1e-6

    def test_contraction_and_monotone_trace(self, setup):
        prior, obs, w = setup
        traces = []
        for n in (1, 3, 10, 30):
            post = posterior_update(prior, obs.subset(n), w)
            contraction = w.rho**2 * prior.cov - post.cov
            assert np.linalg.eigvalsh(contraction).min() >= -1e-10 * np.trace(prior.cov)
            traces.append(np.trace(post.cov))
        assert all(a > b for a, b in zip(traces, traces[1:]))

    def test_dense_and_sensor_agree(self, setup):
        prior, obs, w = setup
        H = np.eye(prior.mean.size)[::2]
        part = ObservationSet(obs.coords[::2], H, obs.Y[::2], obs.sigma_e)
        a = posterior_update(prior, part, w, method="dense")
        b = posterior_update(prior, part, w, method="sensor")
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-8)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-8)
        assert a.tag == b.tag == "posterior"
        assert a.jitter == 0.0

    def test_low_rank_prior_records_jitter(self):
        x = np.linspace(0, 1, 6)
        v = np.sin(x) + 1.0
        prior = GaussianField(v, np.outer(v, v))
        obs = direct_observations(prior, x, v[:, None], 0.01)
        post = posterior_update(prior, obs, (1.0, 0.1, 0.2))
        assert post.jitter > 0.0
        assert np.all(np.isfinite(post.cov))
        other = posterior_update(prior, obs, (1.0, 0.1, 0.2), method="sensor")
        np.testing.assert_allclose(post.mean, other.mean, atol=1e-8)
        np.testing.assert_allclose(post.cov, other.cov, atol=1e-8)

    def test_unknown_method(self, setup):
        prior, obs, w = setup
        with pytest.raises(ValueError):
            posterior_update(prior, obs, w, method="magic")

    def test_true_response(self, setup):
        prior, obs, w = setup
        post = posterior_update(prior, obs, w)
        z = true_response(post, w, obs)
        np.testing.assert_allclose(z.mean, post.mean)
        np.testing.assert_allclose(z.cov, post.cov + kernel_matrix(obs.coords, w.sigma_d, w.l_d))
        assert np.all(z.std > post.std)


class TestObservations:
    def test_reading_statistics(self):
        x = np.linspace(0, 1, 5)
        w = Hyperparameters(2.0, 0.3, 0.4)
        truth = np.arange(5.0)
        obs = generate_observations(truth, w, 0.1, x, 10_000, seed=4)
        np.testing.assert_allclose(obs.Y.mean(axis=1), 2.0 * truth, atol=0.02)
        C = np.cov(obs.Y)
        expected = kernel_matrix(x, 0.3, 0.4) + 0.01 * np.eye(5)
        np.testing.assert_allclose(np.diag(C), np.diag(expected), rtol=0.03)
        off = ~np.eye(5, dtype=bool)
        np.testing.assert_allclose(C[off], expected[off], atol=0.05 * expected[0, 0])

    def test_seeded(self):
        x = np.linspace(0, 1, 4)
        a = generate_observations(np.ones(4), (1.0, 0.1, 0.2), 0.01, x, 3, seed=9)
        b = generate_observations(np.ones(4), (1.0, 0.1, 0.2), 0.01, x, 3, seed=9)
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            generate_observations(np.ones(3), (1.0, 0.1, 0.2), 0.01, np.linspace(0, 1, 4), 2)

    def test_rmse(self):
        obs = ObservationSet(np.linspace(0, 1, 4), None, np.full((4, 3), 2.0), 0.0)
        assert rmse(np.full(4, 2.0), obs) == 0.0
        assert rmse(np.full(4, 2.5), obs) == pytest.approx(0.5)

    def test_subset_keeps_first_readings(self):
        obs = ObservationSet(np.zeros(2), None, np.arange(8.0).reshape(2, 4), 0.1)
        np.testing.assert_array_equal(obs.subset(2).Y, [[0, 1], [4, 5]])

    def test_validation(self):
        with pytest.raises(ValueError):
            ObservationSet(np.zeros(3), None, np.zeros((2, 1)), 0.1)
        with pytest.raises(ValueError):
            Hyperparameters(1.0, 0.1, 0.0)


class TestHyperparameters:
    @settings(max_examples=50, deadline=None)
    @given(rho=st.floats(0.0, 10.0), s=st.floats(1e-6, 10.0), l=st.floats(1e-6, 10.0))
    def test_search_round_trip(self, rho, s, l):
        back = Hyperparameters.from_search(Hyperparameters(rho, s, l).to_search())
        np.testing.assert_allclose(back.as_tuple(), (rho, s, l), rtol=1e-12)

    def test_random_points_with_zero_sigma(self):
        pts = random_hyperparameters((1.0, 0.0, 2.0), 5, seed=0)
        assert all(p.sigma_d > 0 for p in pts)
