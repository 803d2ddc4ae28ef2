import io

import numpy as np
import pytest

from enkg.exceptions import InvalidArgumentError, NumericalAbort, UnsupportedOperation
from enkg.guidance import (
    EnKGCorrector,
    GuidanceConfig,
    ObservationModel,
    RunLog,
    enkg_correction,
    ensemble_stats,
    exact_gradient_correction,
    kalman_increments,
    push_to_data_manifold,
    run_pc,
    spread,
    step_size,
)
from enkg.prior import GaussianPrior, OdeSolverConfig, make_time_grid


def linear_setup(n=5, m=3, j=20, seed=0, gamma=0.3):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    obs = ObservationModel(lambda x: x @ a.T, rng.standard_normal(m), gamma)
    x = rng.standard_normal((j, n))
    return a, obs, x


def test_observation_model_counts_rows():
    _, obs, x = linear_setup()
    obs(x)
    obs(x[0])
    assert obs.n_evals == x.shape[0] + 1


def test_observation_model_rejects_bad_gamma():
    with pytest.raises(InvalidArgumentError):
        ObservationModel(lambda x: x, np.zeros(2), np.array([1.0, 0.0]))


def test_observation_model_nonfinite_aborts_with_index():
    obs = ObservationModel(lambda x: np.where(x > 1, np.nan, x), np.zeros(1))
    with pytest.raises(NumericalAbort) as info:
        obs(np.array([[0.0], [2.0]]))
    assert info.value.index == 1


def test_observation_model_workers_match_serial():
    a, obs, x = linear_setup(j=33)
    par = ObservationModel(obs.forward, obs.y, obs.gamma, workers=4)
    np.testing.assert_array_equal(par(x), obs(x))
    assert par.n_evals == 33


def test_grad_log_likelihood_requires_vjp():
    _, obs, x = linear_setup()
    with pytest.raises(UnsupportedOperation):
        obs.grad_log_likelihood(x)


def test_kalman_increment_by_hand():
    # two particles in 1-D, identity map, gamma 1
    obs = ObservationModel(lambda x: x, np.array([1.0]))
    x = np.array([[0.0], [2.0]])
    stats = ensemble_stats(x, obs(x), obs)
    # dX = dG = [-1, 1], r = [1, -1]; inc_j = 1/2 sum_k dG_k r_j dX_k = r_j
    np.testing.assert_allclose(kalman_increments(stats, obs), [[1.0], [-1.0]])
    assert stats.cyy_trace == 1.0


def test_linear_increment_matches_dense_covariance():
    a, obs, x = linear_setup()
    stats = ensemble_stats(x, obs(x), obs)
    cxx = stats.deviations.T @ stats.deviations / x.shape[0]
    grad = (obs.y - x @ a.T) / obs.gamma @ a
    np.testing.assert_allclose(kalman_increments(stats, obs), grad @ cxx, atol=1e-12)


def test_trace_rule_by_hand():
    obs = ObservationModel(lambda x: x, np.array([1.0]), 4.0)
    x = np.array([[0.0], [2.0]])
    stats = ensemble_stats(x, obs(x), obs)
    assert step_size(stats, "trace", 1.0, obs) == pytest.approx(4.0)


def test_frobenius_rule_invariant_to_duplication():
    _, obs, x = linear_setup()
    s1 = ensemble_stats(x, obs(x), obs)
    x2 = np.concatenate([x, x])
    s2 = ensemble_stats(x2, obs(x2), obs)
    assert step_size(s1, "frobenius", 1.0, obs) == pytest.approx(step_size(s2, "frobenius", 1.0, obs))
    # the spec-literal adaptive rule doubles with J under duplication
    assert step_size(s2, "adaptive", 1.0, obs) == pytest.approx(2 * step_size(s1, "adaptive", 1.0, obs))


def test_adaptive_particle_shape():
    _, obs, x = linear_setup()
    stats = ensemble_stats(x, obs(x), obs)
    w = step_size(stats, "adaptive-particle", 1.0, obs)
    assert w.shape == (x.shape[0],) and np.all(w > 0)


def test_unknown_rule_rejected():
    _, obs, x = linear_setup()
    with pytest.raises(InvalidArgumentError):
        step_size(ensemble_stats(x, obs(x), obs), "nope")


@pytest.mark.parametrize("rule", ["trace", "frobenius"])
def test_update_invariant_to_isotropic_gamma(rule):
    a, obs, x = linear_setup()
    other = ObservationModel(obs.forward, obs.y, 17.0 * obs.gamma)
    outs = []
    for o in (obs, other):
        stats = ensemble_stats(x, o(x), o)
        outs.append(enkg_correction(x, stats, o, step_size(stats, rule, 0.5, o)))
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-12)


def test_zero_step_is_identity():
    _, obs, x = linear_setup()
    stats = ensemble_stats(x, obs(x), obs)
    np.testing.assert_array_equal(enkg_correction(x, stats, obs, 0.0), x)


def test_subspace_property():
    _, obs, x = linear_setup(n=10, j=4)
    stats = ensemble_stats(x, obs(x), obs)
    out = enkg_correction(x, stats, obs, 0.7)
    basis = (x - x.mean(axis=0)).T
    delta = (out - x).T
    coef, *_ = np.linalg.lstsq(basis, delta, rcond=None)
    np.testing.assert_allclose(basis @ coef, delta, atol=1e-12)


def test_collapsed_ensemble_is_untouched():
    prior = GaussianPrior(np.zeros(2))
    obs = ObservationModel(lambda x: x, np.ones(2))
    x = np.tile([0.5, -0.5], (6, 1))
    log = RunLog()
    out, info = EnKGCorrector(prior, obs, GuidanceConfig())(x, x, 1.0, 0.0, log)
    np.testing.assert_array_equal(out, x)
    assert info["w_i"] == 0.0 and log.events == []


def test_zero_cyy_with_spread_logs_event():
    prior = GaussianPrior(np.zeros(2))
    obs = ObservationModel(lambda x: np.zeros((len(x), 1)), np.ones(1))
    x = np.random.default_rng(0).standard_normal((5, 2))
    log = RunLog()
    out, _ = EnKGCorrector(prior, obs, GuidanceConfig())(x, x, 1.0, 0.0, log)
    np.testing.assert_array_equal(out, x)
    assert len(log.events) == 1


def test_push_to_manifold_at_zero_is_copy():
    prior = GaussianPrior(np.zeros(3))
    x = np.ones((2, 3))
    out = push_to_data_manifold(x, prior, 0.0)
    np.testing.assert_array_equal(out, x)
    assert out is not x


def test_exact_gradient_step():
    x = np.array([1.0, 2.0])
    out = exact_gradient_correction(x, grad_log_lik=lambda z: -z, w=0.25)
    np.testing.assert_allclose(out, 0.75 * x)


def test_monotone_spread_under_trace_rule():
    a, obs, x = linear_setup(n=4, m=6, j=12, seed=3)
    values = [spread(x)]
    for _ in range(50):
        stats = ensemble_stats(x, obs(x), obs)
        x = enkg_correction(x, stats, obs, step_size(stats, "trace", 1.0, obs))
        values.append(spread(x))
    assert all(b <= a * (1 + 1e-10) for a, b in zip(values[:-1], values[1:]))


def test_guidance_config_validation():
    with pytest.raises(InvalidArgumentError):
        GuidanceConfig(step_rule="bogus")
    with pytest.raises(InvalidArgumentError):
        GuidanceConfig(prediction_method="rk4")
    assert GuidanceConfig().step_rule == "trace"


def test_run_pc_bookkeeping():
    a, obs, _ = linear_setup()
    prior = GaussianPrior(np.zeros(5))
    cfg = GuidanceConfig(corrections_per_step=2, likelihood_solver=OdeSolverConfig("heun", 3))
    result = run_pc(prior, obs, make_time_grid(6, 10.0), "enkg", cfg, random_state=0, n_particles=8)
    log = result.log
    assert log.corrections == 12
    assert log.fwd_evals == 8 * 12 == obs.n_evals
    assert log.seq_fwd == 12
    # prediction: 5 heun steps of 2 calls and a final 1-call step; push: 5 cost (2*3-1) twice per step
    assert log.seq_dm == 11 + 2 * 5 * 5
    assert log.dm_evals == 8 * log.seq_dm
    assert [row["iter"] for row in log.rows] == list(range(6))


def test_run_pc_unconditional_matches_prior_moments():
    prior = GaussianPrior(np.array([1.0, -1.0]), np.diag([0.5, 2.0]))
    result = run_pc(prior, None, make_time_grid(40, 40.0), None, random_state=1, n_particles=4000)
    assert result.log.fwd_evals == 0
    np.testing.assert_allclose(result.particles.mean(axis=0), [1.0, -1.0], atol=0.08)
    np.testing.assert_allclose(result.particles.var(axis=0), [0.5, 2.0], rtol=0.08)


def test_run_pc_reproducible():
    a, obs, _ = linear_setup()
    prior = GaussianPrior(np.zeros(5))
    grid = make_time_grid(5, 10.0)
    r1 = run_pc(prior, obs, grid, "enkg", random_state=4, n_particles=6)
    r2 = run_pc(prior, obs, grid, "enkg", random_state=4, n_particles=6)
    np.testing.assert_array_equal(r1.particles, r2.particles)


def test_run_pc_nonfinite_aborts_with_iteration():
    prior = GaussianPrior(np.zeros(1))

    def corrector(x_prev, x_pred, t, t_next, log):
        return (x_pred * np.inf if t_next < 5 else x_pred), {}

    with pytest.raises(NumericalAbort) as info:
        run_pc(prior, None, make_time_grid(4, 10.0, 1.0), corrector, random_state=0, n_particles=2)
    assert info.value.iteration == 2


def test_runlog_csv_roundtrip(tmp_path):
    log = RunLog()
    log.fwd_evals = 10
    log.record(iter=0, t=0.5, w_i=0.1, tr_cxx_proxy=1.0, tr_cyy=2.0, mean_residual=3.0)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    text = path.read_bytes().decode()
    assert text.startswith("iter,t,w_i,tr_cxx_proxy,tr_cyy,mean_residual,fwd_evals_total,dm_evals_total\r\n")
    back = RunLog.from_csv(path)
    assert back.rows == log.rows and back.fwd_evals == 10
    buf = io.StringIO()
    log.to_csv(buf)
    assert buf.getvalue() == text


def toy_pair():
    # particles {0, 2}, identity map, y = 3: dG = (-1, 1), r = (3, 1)
    obs = ObservationModel(lambda x: x, np.array([3.0]))
    x = np.array([[0.0], [2.0]])
    return obs, x, ensemble_stats(x, obs(x), obs)


def test_pair_increment_by_hand():
    obs, _, stats = toy_pair()
    # g_1 = 1/2 [(-1)(3)(-1) + (1)(3)(1)] = 3, g_2 = 1/2 [(-1)(1)(-1) + (1)(1)(1)] = 1
    np.testing.assert_allclose(kalman_increments(stats, obs), [[3.0], [1.0]])


def test_pair_adaptive_by_hand():
    obs, _, stats = toy_pair()
    # J^2 / sqrt(sum ||dG||^2 * sum ||r||^2) = 4 / sqrt(2 * 10)
    assert step_size(stats, "adaptive", 1.0, obs) == pytest.approx(4 / np.sqrt(20))


def test_trace_rule_reciprocal():
    obs = ObservationModel(lambda x: x, np.zeros(1))
    x = np.array([[-2.0], [2.0]])
    stats = ensemble_stats(x, obs(x), obs)
    assert stats.cyy_trace == 4.0
    assert step_size(stats, "trace", 1.0, obs) == 0.25


def test_zero_residual_adaptive_signals_collapse():
    obs = ObservationModel(lambda x: x, np.array([1.0]))
    x = np.array([[1.0], [1.0]])
    assert step_size(ensemble_stats(x, obs(x), obs), "adaptive", 1.0, obs) is None


def test_identity_gradient_step():
    obs = ObservationModel(lambda x: x, np.array([1.0, 2.0]), vjp=lambda x, v: v)
    x = np.array([[0.5, 0.5]])
    out = exact_gradient_correction(x, obs, w=0.1)
    np.testing.assert_allclose(out, x + 0.1 * (obs.y - x))


def test_push_single_substep_is_one_step():
    from enkg.prior import pf_ode_step

    prior = GaussianPrior(np.zeros(2), np.diag([0.3, 2.0]))
    x = np.random.default_rng(0).standard_normal((3, 2))
    out = push_to_data_manifold(x, prior, 0.2, OdeSolverConfig("heun", 1))
    np.testing.assert_array_equal(out, pf_ode_step(prior, x, 0.2, 0.0, "heun"))


def test_push_gaussian_analytic():
    prior = GaussianPrior(np.zeros(3))
    x = np.random.default_rng(1).standard_normal((4, 3))
    out = push_to_data_manifold(x, prior, 2.0, OdeSolverConfig("heun", 200))
    np.testing.assert_allclose(out, x / np.sqrt(5.0), rtol=1e-3)
