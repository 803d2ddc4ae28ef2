import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import logsumexp

from enkg.exceptions import InvalidArgumentError
from enkg.prior import (
    GaussianMixturePrior,
    GaussianPrior,
    GRFPrior,
    OdeSolverConfig,
    TimeGrid,
    denoise,
    make_time_grid,
    pf_ode_solve,
    pf_ode_step,
    score,
    solve_cost,
)


def mixture_logpdf(x, weights, means, variances, sigma):
    # 1-D closed-form noised mixture density, evaluated independently
    comps = [np.log(w) + stats.norm.logpdf(x, m, np.sqrt(v + sigma**2))
             for w, m, v in zip(weights, means, variances)]
    return logsumexp(comps)


def test_time_grid_small_cases():
    np.testing.assert_array_equal(make_time_grid(1, 1.0, 1.0).times, [1.0, 0.0])
    np.testing.assert_allclose(make_time_grid(2, 4.0, 1.0).times, [4.0, 2.0, 0.0])


def test_time_grid_rho_formula():
    grid = make_time_grid(4, 10.0, 7.0)
    expected = [(10.0 ** (1 / 7) * (1 - i / 4)) ** 7 for i in range(5)]
    np.testing.assert_allclose(grid.times, expected, rtol=1e-14)
    assert grid.times[-1] == 0.0
    assert np.all(np.diff(grid.times) < 0)


@pytest.mark.parametrize("args", [(0, 1.0), (3, 0.0), (3, -1.0)])
def test_time_grid_rejects_bad_arguments(args):
    with pytest.raises(InvalidArgumentError):
        make_time_grid(*args)


def test_time_grid_rejects_unsorted():
    with pytest.raises(InvalidArgumentError):
        TimeGrid(np.array([1.0, 1.0, 0.0]))


def test_standard_normal_score():
    prior = GaussianPrior(np.zeros(3))
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(score(prior, x, 0.0), -x)
    np.testing.assert_allclose(score(prior, x, 3.0), -x / 10)


def test_gmm_score_matches_finite_difference():
    w, m, v = [0.5, 0.5], [-2.0, 2.0], [1.0, 1.0]
    prior = GaussianMixturePrior(np.array(w), np.array(m)[:, None], np.array(v))
    h = 1e-5
    fd = (mixture_logpdf(0.7 + h, w, m, v, 1.0) - mixture_logpdf(0.7 - h, w, m, v, 1.0)) / (2 * h)
    got = score(prior, np.array([0.7]), 1.0)[0]
    assert abs(got - fd) <= 1e-6 * abs(fd)


def test_gmm_score_stable_far_from_modes():
    prior = GaussianMixturePrior(np.array([0.3, 0.7]), np.array([[-2.0], [2.0]]), np.array([0.01, 0.01]))
    s = score(prior, np.array([[500.0], [-500.0]]), 0.0)
    assert np.all(np.isfinite(s))


def test_denoise_zero_noise_and_shrinkage():
    prior = GaussianPrior(np.zeros(2))
    x = np.array([2.0, 0.0])
    np.testing.assert_array_equal(denoise(prior, x, 0.0), x)
    np.testing.assert_allclose(denoise(prior, x, 1.0), [1.0, 0.0])


def test_gmm_denoise_matches_quadrature():
    w, m, v = np.array([0.4, 0.6]), np.array([-1.5, 1.0]), np.array([0.3, 0.5])
    prior = GaussianMixturePrior(w, m[:, None], v)
    sigma, xt = 0.8, 0.35

    def joint(x0):
        p0 = sum(wk * stats.norm.pdf(x0, mk, np.sqrt(vk)) for wk, mk, vk in zip(w, m, v))
        return p0 * stats.norm.pdf(xt, x0, sigma)

    num = integrate.quad(lambda x0: x0 * joint(x0), -20, 20, epsabs=1e-13)[0]
    den = integrate.quad(joint, -20, 20, epsabs=1e-13)[0]
    assert denoise(prior, np.array([xt]), sigma)[0] == pytest.approx(num / den, rel=1e-8)


def test_tweedie_identity_all_priors():
    rng = np.random.default_rng(0)
    priors = [
        GaussianPrior(rng.standard_normal(4), np.diag(rng.uniform(0.5, 2, 4))),
        GaussianMixturePrior(np.array([0.2, 0.8]), rng.standard_normal((2, 4)), np.array([0.5, 1.5])),
        GRFPrior((4, 4), amplitude=3.0),
    ]
    for prior in priors:
        x = rng.standard_normal((5, prior.dim))
        np.testing.assert_allclose(denoise(prior, x, 1.7) - x, 1.7**2 * score(prior, x, 1.7), atol=1e-12)


def test_gaussian_score_affine():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 6))
    prior = GaussianPrior(rng.standard_normal(6), a @ a.T + np.eye(6))
    x1, x2 = rng.standard_normal((2, 6))
    alpha = 0.37
    lhs = score(prior, alpha * x1 + (1 - alpha) * x2, 0.9)
    rhs = alpha * score(prior, x1, 0.9) + (1 - alpha) * score(prior, x2, 0.9)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_grf_matches_dense_gaussian():
    prior = GRFPrior((4, 4), tau=1.5, alpha=2.0, amplitude=2.0)
    cov = prior._apply(np.eye(16), prior.eigvals)
    dense = GaussianPrior(np.zeros(16), (cov + cov.T) / 2)
    x = np.random.default_rng(2).standard_normal((3, 16))
    np.testing.assert_allclose(prior.score(x, 0.6), dense.score(x, 0.6), atol=1e-10)
    assert np.all(prior.eigvals > 0)


def test_score_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        score(GaussianPrior(np.zeros(3)), np.zeros(4), 1.0)


def test_mixture_weights_validated():
    with pytest.raises(InvalidArgumentError):
        GaussianMixturePrior(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones(2))


def test_euler_step_by_hand():
    prior = GaussianPrior(np.zeros(3))
    x = np.ones(3)
    np.testing.assert_allclose(pf_ode_step(prior, x, 1.0, 0.0, "euler"), 0.5 * x)
    np.testing.assert_array_equal(pf_ode_step(prior, x, 0.4, 0.4, "heun"), x)
    with pytest.raises(InvalidArgumentError):
        pf_ode_step(prior, x, 0.2, 0.5)


def test_euler_denoiser_form():
    prior = GaussianMixturePrior(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.array([0.2, 0.2]))
    x, t, t_next = np.array([0.4]), 1.3, 0.8
    x0 = denoise(prior, x, t)
    np.testing.assert_allclose(pf_ode_step(prior, x, t, t_next, "euler"), x + (x - x0) / t * (t_next - t))


def _flow_error(method, n, big_t=2.0):
    prior = GaussianPrior(np.zeros(1))
    grid = np.linspace(big_t, 0.0, n + 1)
    x = np.array([1.0])
    for a, b in zip(grid[:-1], grid[1:]):
        x = pf_ode_step(prior, x, a, b, method)
    return abs(x[0] - 1.0 / np.sqrt(1 + big_t**2))


def test_heun_error_second_order():
    errs = [_flow_error("heun", n) for n in (20, 40, 80)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


def test_pf_ode_solve_gaussian_flow():
    prior = GaussianPrior(np.zeros(4))
    x = np.random.default_rng(3).standard_normal(4)
    out = pf_ode_solve(prior, x, 5.0, OdeSolverConfig("heun", 2000, rho=1.0))
    np.testing.assert_allclose(out, x / np.sqrt(26.0), rtol=1e-6)


def test_pf_ode_solve_single_step_is_one_step():
    prior = GaussianMixturePrior(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.array([0.2, 0.2]))
    x = np.array([0.3])
    np.testing.assert_array_equal(pf_ode_solve(prior, x, 0.7, OdeSolverConfig("euler", 1)),
                                  pf_ode_step(prior, x, 0.7, 0.0, "euler"))


def test_pf_ode_solve_gmm_self_convergence():
    prior = GaussianMixturePrior(np.array([0.5, 0.5]), np.array([[-2.0], [2.0]]), np.array([0.25, 0.25]))
    x = np.linspace(-3, 3, 7)[:, None] * 4
    sols = {n: pf_ode_solve(prior, x, 10.0, OdeSolverConfig("heun", n, rho=1.0)) for n in (100, 200, 400)}
    d1 = np.max(np.abs(sols[100] - sols[200]))
    d2 = np.max(np.abs(sols[200] - sols[400]))
    assert d1 / d2 == pytest.approx(4.0, rel=0.25)


def test_gmm_unconditional_moments():
    prior = GaussianMixturePrior(np.array([0.3, 0.7]), np.array([[-2.0, 0.0], [1.0, 1.0]]), np.array([0.3, 0.6]))
    n = 10_000
    x = 40.0 * np.random.default_rng(4).standard_normal((n, 2))
    out = pf_ode_solve(prior, x, 40.0, OdeSolverConfig("heun", 60))
    cov = prior.covariance
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(out.mean(axis=0) - prior.mean) < 3 * se)
    # variance of a sample variance ~ 2 var^2 / n for near-Gaussian, widen for the mixture
    emp = np.cov(out.T)
    assert np.all(np.abs(np.diag(emp) - np.diag(cov)) < 3 * np.sqrt(3.0 / n) * np.diag(cov))


def test_solve_cost():
    assert solve_cost(OdeSolverConfig("heun", 10)) == 19
    assert solve_cost(OdeSolverConfig("euler", 10)) == 10
