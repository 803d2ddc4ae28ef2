"""scikit-learn style estimators around the samplers.

``fit(y)`` solves the inverse problem for observation ``y`` and ``predict()``
returns the point estimate (ensemble or sample mean). Fitted attributes:
``particles_``, ``estimate_``, ``log_`` and ``n_forward_evals_``.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_rng
from .baselines import EkiConfig, GsgConfig, eki_run, gsg_guided_run
from .exceptions import InvalidArgumentError
from .guidance import ExactGradientCorrector, GuidanceConfig, ObservationModel, initial_particles, run_pc
from .prior import OdeSolverConfig, make_time_grid

__all__ = ["EnKG", "EKI", "GSGGuidance", "ExactGradientGuidance", "UnconditionalSampler"]


def _observation(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InvalidArgumentError(f"y must be a non-empty 1-D array, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("y contains non-finite values")
    return y


class _Solver(BaseEstimator):
    def _obs(self, y):
        return ObservationModel(self.forward, _observation(y), self.noise_var,
                                vjp=getattr(self, "vjp", None), workers=self.workers)

    def _grid(self):
        return make_time_grid(self.n_steps, self.sigma_max, self.rho)

    def _store(self, result, obs):
        self.particles_ = result.particles
        self.estimate_ = result.particles.mean(axis=0)
        self.log_ = result.log
        self.n_forward_evals_ = result.log.fwd_evals
        self.obs_ = obs
        return self

    def predict(self, X=None):
        """The fitted point estimate; ``X`` is ignored."""
        check_is_fitted(self, "estimate_")
        return self.estimate_.copy()

    def residual(self):
        """``||y - G(estimate)||_Gamma`` (one extra counted forward call)."""
        check_is_fitted(self, "estimate_")
        return float(self.obs_.misfit(self.obs_(self.estimate_))[0])


class _Guided(_Solver):
    def _config(self):
        solver = OdeSolverConfig(self.solver_method, self.solver_steps, self.rho)
        return GuidanceConfig(step_rule=getattr(self, "step_rule", "trace"),
                              guidance_scale=getattr(self, "guidance_scale", 2.0),
                              corrections_per_step=self.corrections_per_step,
                              likelihood_solver=solver, prediction_method=self.prediction)


class EnKG(_Guided):
    """Ensemble Kalman diffusion guidance.

    >>> import numpy as np
    >>> from enkg.prior import GaussianPrior
    >>> est = EnKG(GaussianPrior(np.zeros(2)), lambda x: x, noise_var=0.01,
    ...            n_particles=32, n_steps=20, random_state=0)
    >>> est.fit(np.array([1.0, -1.0])).predict().shape
    (2,)
    """

    def __init__(self, prior, forward, noise_var=1.0, n_particles=256, n_steps=100,
                 sigma_max=80.0, rho=7.0, step_rule="trace", guidance_scale=2.0,
                 corrections_per_step=1, prediction="heun", solver_method="heun",
                 solver_steps=10, workers=1, random_state=None):
        self.prior = prior
        self.forward = forward
        self.noise_var = noise_var
        self.n_particles = n_particles
        self.n_steps = n_steps
        self.sigma_max = sigma_max
        self.rho = rho
        self.step_rule = step_rule
        self.guidance_scale = guidance_scale
        self.corrections_per_step = corrections_per_step
        self.prediction = prediction
        self.solver_method = solver_method
        self.solver_steps = solver_steps
        self.workers = workers
        self.random_state = random_state

    def fit(self, y):
        obs = self._obs(y)
        rng = as_rng(self.random_state)
        result = run_pc(self.prior, obs, self._grid(), "enkg", self._config(), rng,
                        n_particles=self.n_particles)
        return self._store(result, obs)


class ExactGradientGuidance(_Guided):
    """Gradient guidance through an analytic forward adjoint ``vjp(x, v)``."""

    def __init__(self, prior, forward, vjp, noise_var=1.0, step=1.0, n_particles=1,
                 n_steps=100, sigma_max=80.0, rho=7.0, corrections_per_step=1,
                 prediction="heun", solver_method="heun", solver_steps=10, workers=1,
                 random_state=None):
        self.prior = prior
        self.forward = forward
        self.vjp = vjp
        self.noise_var = noise_var
        self.step = step
        self.n_particles = n_particles
        self.n_steps = n_steps
        self.sigma_max = sigma_max
        self.rho = rho
        self.corrections_per_step = corrections_per_step
        self.prediction = prediction
        self.solver_method = solver_method
        self.solver_steps = solver_steps
        self.workers = workers
        self.random_state = random_state

    def fit(self, y):
        obs = self._obs(y)
        cfg = self._config()
        corrector = ExactGradientCorrector(self.prior, obs, cfg, w=self.step)
        result = run_pc(self.prior, obs, self._grid(), corrector, cfg,
                        as_rng(self.random_state), n_particles=self.n_particles)
        return self._store(result, obs)


class UnconditionalSampler(_Guided):
    """Plain PF-ODE sampling from the prior; ``fit`` ignores ``y``."""

    def __init__(self, prior, n_particles=256, n_steps=100, sigma_max=80.0, rho=7.0,
                 prediction="heun", random_state=None):
        self.prior = prior
        self.n_particles = n_particles
        self.n_steps = n_steps
        self.sigma_max = sigma_max
        self.rho = rho
        self.prediction = prediction
        self.random_state = random_state

    def fit(self, y=None):
        cfg = GuidanceConfig(prediction_method=self.prediction)
        result = run_pc(self.prior, None, self._grid(), None, cfg,
                        as_rng(self.random_state), n_particles=self.n_particles)
        self.particles_ = result.particles
        self.estimate_ = result.particles.mean(axis=0)
        self.log_ = result.log
        self.n_forward_evals_ = 0
        return self


class EKI(_Solver):
    """Ensemble Kalman inversion started from prior samples (no diffusion)."""

    def __init__(self, prior, forward, noise_var=1.0, n_particles=256, iterations=100,
                 step_rule="trace", guidance_scale=1.0, workers=1, random_state=None):
        self.prior = prior
        self.forward = forward
        self.noise_var = noise_var
        self.n_particles = n_particles
        self.iterations = iterations
        self.step_rule = step_rule
        self.guidance_scale = guidance_scale
        self.workers = workers
        self.random_state = random_state

    def fit(self, y):
        obs = self._obs(y)
        init = self.prior.sample(self.n_particles, as_rng(self.random_state))
        cfg = EkiConfig(self.iterations, self.step_rule, self.guidance_scale)
        return self._store(eki_run(obs, init, cfg), obs)


class GSGGuidance(_Solver):
    """Guidance with the forward or central Gaussian-smoothed gradient."""

    def __init__(self, prior, forward, noise_var=1.0, variant="forward", mu=1e-3, q=10_000,
                 step=1.0, n_samples=1, n_steps=100, sigma_max=80.0, rho=7.0, workers=1,
                 random_state=None):
        self.prior = prior
        self.forward = forward
        self.noise_var = noise_var
        self.variant = variant
        self.mu = mu
        self.q = q
        self.step = step
        self.n_samples = n_samples
        self.n_steps = n_steps
        self.sigma_max = sigma_max
        self.rho = rho
        self.workers = workers
        self.random_state = random_state

    def fit(self, y):
        obs = self._obs(y)
        rng = as_rng(self.random_state)
        grid = self._grid()
        init = initial_particles(self.n_samples, self.prior.dim, grid.times[0], rng)
        cfg = GsgConfig(mu=self.mu, q=self.q, variant=self.variant)
        result = gsg_guided_run(self.prior, obs, grid, cfg, w=self.step, random_state=rng, init=init)
        return self._store(result, obs)
