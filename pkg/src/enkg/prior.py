"""Analytic diffusion priors and probability-flow ODE integration.

All priors here are closed under Gaussian noising, so the noised marginal
``p_sigma = prior * N(0, sigma^2 I)`` has an exact score at every noise level.
The noise schedule is the identity ``sigma(t) = t``; the probability flow ODE
reads ``dx/dt = -t * score(x, t)``.

Every function accepts a single vector of shape ``(n,)`` or a batch of shape
``(B, n)`` and returns the same layout.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._spectral import grf_eigenvalues, spectral_multiply
from ._validation import as_batch, as_rng, check_positive, check_positive_int, unbatch
from .exceptions import InvalidArgumentError

__all__ = [
    "NoiseSchedule",
    "TimeGrid",
    "OdeSolverConfig",
    "GaussianPrior",
    "GaussianMixturePrior",
    "GRFPrior",
    "make_time_grid",
    "score",
    "denoise",
    "pf_ode_step",
    "pf_ode_solve",
    "score_evaluations",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """The identity schedule sigma(t) = t on [0, sigma_max]."""

    sigma_max: float = 80.0
    sigma_min: float = 0.0
    kind: str = "identity"

    def __post_init__(self):
        if self.kind != "identity":
            raise InvalidArgumentError(f"unsupported schedule kind {self.kind!r}")
        check_positive(self.sigma_max, "sigma_max")
        check_positive(self.sigma_min, "sigma_min", allow_zero=True)

    def sigma(self, t):
        return t

    def sigma_dot(self, t):
        return 1.0

    def drift_scale(self, t):
        """sigma_dot(t) * sigma(t), the factor in front of the score."""
        return self.sigma_dot(t) * self.sigma(t)


IDENTITY = NoiseSchedule()


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    rho: float = 7.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise InvalidArgumentError("a time grid needs at least two points")
        if times[-1] != 0.0:
            raise InvalidArgumentError("time grids must end exactly at t = 0")
        if np.any(np.diff(times) >= 0):
            raise InvalidArgumentError("time grids must be strictly decreasing")
        object.__setattr__(self, "times", times)

    @property
    def n_steps(self):
        return self.times.size - 1

    def __len__(self):
        return self.times.size

    def __iter__(self):
        return iter(self.times)

    def pairs(self):
        return zip(self.times[:-1], self.times[1:])


@dataclass(frozen=True)
class OdeSolverConfig:
    method: str = "heun"
    steps_per_solve: int = 10
    rho: float = 7.0

    def __post_init__(self):
        if self.method not in ("euler", "heun"):
            raise InvalidArgumentError(f"unknown ODE method {self.method!r}")
        check_positive_int(self.steps_per_solve, "steps_per_solve")
        if self.rho < 1:
            raise InvalidArgumentError("rho must be >= 1")


def make_time_grid(n_steps, sigma_max, rho=7.0):
    """rho-warped grid from sigma_max down to exactly 0.

    ``t_i = (sigma_max^(1/rho) * (1 - i/N))^rho`` for ``i = 0..N``.
    """
    n_steps = check_positive_int(n_steps, "N")
    sigma_max = check_positive(sigma_max, "sigma_max")
    if not rho >= 1:
        raise InvalidArgumentError(f"rho must be >= 1, got {rho}")
    top = sigma_max ** (1.0 / rho)
    frac = np.arange(n_steps + 1) / n_steps
    times = (top + frac * (0.0 - top)) ** rho
    times[0] = sigma_max
    times[-1] = 0.0
    return TimeGrid(times, rho=float(rho))


class GaussianPrior:
    """N(mean, cov); ``cov`` may be a scalar, a diagonal vector or a dense matrix."""

    def __init__(self, mean, cov=1.0):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        n = self.mean.size
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = np.full(n, float(cov))
        if cov.ndim == 1:
            if cov.size != n:
                raise InvalidArgumentError("diagonal covariance has the wrong length")
            self.eigvals = cov.copy()
            self.eigvecs = None
        elif cov.shape == (n, n):
            if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-12):
                raise InvalidArgumentError("covariance must be symmetric")
            self.eigvals, self.eigvecs = np.linalg.eigh(cov)
        else:
            raise InvalidArgumentError(f"covariance shape {cov.shape} does not match mean")
        if np.any(self.eigvals <= 0):
            raise InvalidArgumentError("covariance must be positive definite")

    @property
    def dim(self):
        return self.mean.size

    @property
    def covariance(self):
        if self.eigvecs is None:
            return np.diag(self.eigvals)
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T

    def _apply(self, v, fn):
        # v: (B, n); applies U diag(fn(eigvals)) U^T
        if self.eigvecs is None:
            return v * fn(self.eigvals)
        return ((v @ self.eigvecs) * fn(self.eigvals)) @ self.eigvecs.T

    def score(self, x, sigma):
        x, single = as_batch(x, self.dim)
        s2 = float(sigma) ** 2
        out = -self._apply(x - self.mean, lambda lam: 1.0 / (lam + s2))
        return unbatch(out, single)

    def denoise(self, x, sigma):
        return _tweedie(self, x, sigma)

    def denoiser_vjp(self, x, sigma, v):
        """Transpose-Jacobian action of the denoiser, cov (cov + sigma^2)^-1 v."""
        v, single = as_batch(v, self.dim, "v")
        s2 = float(sigma) ** 2
        return unbatch(self._apply(v, lambda lam: lam / (lam + s2)), single)

    def sample(self, n_samples, random_state=None):
        random_state = as_rng(random_state)
        z = random_state.standard_normal((n_samples, self.dim))
        return self.mean + self._apply(z, np.sqrt)


class GaussianMixturePrior:
    """Mixture of isotropic Gaussians sum_k w_k N(means[k], variances[k] I)."""

    def __init__(self, weights, means, variances):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        if self.means.ndim == 1:
            self.means = self.means[:, None]
        self.variances = np.broadcast_to(
            np.asarray(variances, dtype=float), self.weights.shape
        ).copy()
        k = self.weights.size
        if self.weights.ndim != 1 or self.means.shape[0] != k:
            raise InvalidArgumentError("weights and means disagree on the component count")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("mixture weights must be positive and sum to 1")
        if np.any(self.variances <= 0):
            raise InvalidArgumentError("component variances must be positive")

    @property
    def dim(self):
        return self.means.shape[1]

    def _responsibilities(self, x, sigma):
        v = self.variances + float(sigma) ** 2  # (K,)
        diff = self.means[None, :, :] - x[:, None, :]  # (B, K, n)
        sq = np.einsum("bkn,bkn->bk", diff, diff)
        logits = np.log(self.weights) - 0.5 * self.dim * np.log(v) - 0.5 * sq / v
        resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        return resp, diff, v

    def score(self, x, sigma):
        x, single = as_batch(x, self.dim)
        resp, diff, v = self._responsibilities(x, sigma)
        out = np.einsum("bk,bkn->bn", resp / v, diff)
        return unbatch(out, single)

    def denoise(self, x, sigma):
        return _tweedie(self, x, sigma)

    def denoiser_vjp(self, x, sigma, v):
        # The denoiser Jacobian is symmetric:
        #   sum_k r_k s_k^2/v_k I + sigma^2 Cov_r[grad log N_k]
        x, single = as_batch(x, self.dim)
        vec, _ = as_batch(v, self.dim, "v")
        resp, diff, var = self._responsibilities(x, sigma)
        grads = diff / var[None, :, None]  # grad log N_k, (B, K, n)
        centred = grads - np.einsum("bk,bkn->bn", resp, grads)[:, None, :]
        proj = np.einsum("bkn,bn->bk", grads, vec)
        shrink = resp @ (self.variances / var)
        out = shrink[:, None] * vec + float(sigma) ** 2 * np.einsum(
            "bk,bkn->bn", resp * proj, centred
        )
        return unbatch(out, single)

    def sample(self, n_samples, random_state=None):
        random_state = as_rng(random_state)
        comp = random_state.choice(self.weights.size, size=n_samples, p=self.weights)
        z = random_state.standard_normal((n_samples, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * z

    @property
    def mean(self):
        return self.weights @ self.means

    @property
    def covariance(self):
        mu = self.mean
        centred = self.means - mu
        between = (self.weights[:, None] * centred).T @ centred
        return between + np.eye(self.dim) * (self.weights @ self.variances)


class GRFPrior:
    """Zero-mean Gaussian random field on a periodic grid.

    Covariance is diagonal in the unitary Fourier basis with eigenvalues
    ``amplitude^2 (|k|^2 + tau^2)^(-alpha)``. Vectors are row-major
    flattenings of ``shape``.
    """

    def __init__(self, shape, tau=3.0, alpha=2.0, amplitude=1.0):
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) != 2 or min(self.shape) < 2:
            raise InvalidArgumentError(f"GRF needs a 2-D grid shape, got {shape}")
        self.tau = check_positive(tau, "tau")
        self.alpha = float(alpha)
        if self.alpha <= 1:
            raise InvalidArgumentError("alpha must exceed 1")
        self.amplitude = check_positive(amplitude, "amplitude")
        self.eigvals = grf_eigenvalues(self.shape, self.tau, self.alpha, self.amplitude)

    @property
    def dim(self):
        return self.shape[0] * self.shape[1]

    @property
    def mean(self):
        return np.zeros(self.dim)

    def _apply(self, v, multiplier):
        return spectral_multiply(v, multiplier, self.shape)

    def score(self, x, sigma):
        x, single = as_batch(x, self.dim)
        out = -self._apply(x, 1.0 / (self.eigvals + float(sigma) ** 2))
        return unbatch(out, single)

    def denoise(self, x, sigma):
        return _tweedie(self, x, sigma)

    def denoiser_vjp(self, x, sigma, v):
        v, single = as_batch(v, self.dim, "v")
        s2 = float(sigma) ** 2
        return unbatch(self._apply(v, self.eigvals / (self.eigvals + s2)), single)

    def sample(self, n_samples, random_state=None):
        random_state = as_rng(random_state)
        z = random_state.standard_normal((n_samples, self.dim))
        return self._apply(z, np.sqrt(self.eigvals))


def _tweedie(prior, x, sigma):
    s2 = float(sigma) ** 2
    if s2 == 0.0:
        return np.array(x, dtype=float, copy=True)
    return np.asarray(x, dtype=float) + s2 * prior.score(x, sigma)


def score(prior, x, sigma):
    """Exact score of the prior convolved with N(0, sigma^2 I)."""
    check_positive(sigma, "sigma", allow_zero=True)
    return prior.score(x, sigma)


def denoise(prior, x, sigma):
    """Tweedie posterior mean E[x_0 | x_sigma] = x + sigma^2 score(x, sigma)."""
    check_positive(sigma, "sigma", allow_zero=True)
    return prior.denoise(x, sigma)


def _drift(prior, x, t, schedule):
    scale = schedule.drift_scale(t)
    if scale == 0.0:
        return np.zeros_like(x)
    return -scale * prior.score(x, schedule.sigma(t))


def pf_ode_step(prior, x, t_from, t_to, method="euler", schedule=IDENTITY):
    """One step of the probability flow ODE from ``t_from`` down to ``t_to``."""
    if t_to > t_from:
        raise InvalidArgumentError(f"t_to={t_to} is later than t_from={t_from}")
    if t_to < 0:
        raise InvalidArgumentError("t_to must be non-negative")
    x = np.asarray(x, dtype=float)
    h = t_to - t_from
    if h == 0.0:
        return x.copy()
    d0 = _drift(prior, x, t_from, schedule)
    x_next = x + h * d0
    if method == "euler":
        return x_next
    if method != "heun":
        raise InvalidArgumentError(f"unknown ODE method {method!r}")
    d1 = _drift(prior, x_next, t_to, schedule)
    return x + 0.5 * h * (d0 + d1)


def score_evaluations(method, t_to):
    """Score calls consumed by one ``pf_ode_step`` per particle."""
    if method == "heun" and t_to > 0:
        return 2
    return 1


def pf_ode_solve(prior, x, t_start, config=OdeSolverConfig(), schedule=IDENTITY):
    """Integrate the PF-ODE from ``t_start`` to 0 on a rho-warped sub-grid."""
    if t_start <= 0:
        raise InvalidArgumentError("t_start must be positive")
    grid = make_time_grid(config.steps_per_solve, t_start, config.rho)
    for t_from, t_to in grid.pairs():
        x = pf_ode_step(prior, x, t_from, t_to, config.method, schedule)
    return x


def solve_cost(config):
    """Score calls per particle for one ``pf_ode_solve``."""
    return 2 * config.steps_per_solve - 1 if config.method == "heun" else config.steps_per_solve
