"""Benchmark inverse problems: prior, forward map, truth and observation.

Every random quantity is drawn from a named sub-stream of one master seed
(see :mod:`enkg.seeding`), so a problem instance is a pure function of its
settings and the seed.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .forward import MatrixOp, NavierStokesForward, NsConfig, PhaseRetrieval, grf_sample
from .guidance import ObservationModel
from .prior import GaussianMixturePrior, GaussianPrior, GRFPrior
from .seeding import substream

__all__ = ["Problem", "linear_gaussian", "gmm_toy", "phase_retrieval", "navier_stokes", "observe"]


@dataclass
class Problem:
    name: str
    prior: object
    forward: Callable
    vjp: Optional[Callable] = None
    field_shape: Optional[Tuple[int, ...]] = None
    truth: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def as_field(self, x):
        x = np.asarray(x, dtype=float)
        return x.reshape(self.field_shape) if self.field_shape else x

    def observation_model(self, y, gamma, workers=1):
        return ObservationModel(self.forward, y, gamma, vjp=self.vjp, workers=workers)


def observe(forward, truth, sigma_noise, seed):
    """``G(truth) + sigma_noise * RMS(G(truth)) * xi``; returns (y, noise std)."""
    g = np.asarray(forward(np.asarray(truth)[None, :]), dtype=float)[0]
    std = float(sigma_noise) * float(np.sqrt(np.mean(g**2)))
    if std == 0:
        return g, 0.0
    return g + std * substream(seed, "noise").standard_normal(g.size), std


def linear_gaussian(seed, n=16, m=8, offset=2.0, jitter=0.5, cov_floor=0.5):
    """Random ``A`` (entries N(0, 1/n)) and a correlated Gaussian prior.

    Prior mean ``offset + jitter * N(0, I)``, covariance ``L L^T + cov_floor I``
    with ``L`` entries N(0, 1/n). The truth is a prior draw.
    """
    rng = substream(seed, "problem")
    a = rng.standard_normal((m, n)) / np.sqrt(n)
    l = rng.standard_normal((n, n)) / np.sqrt(n)
    cov = l @ l.T + cov_floor * np.eye(n)
    mean = offset + jitter * rng.standard_normal(n)
    prior = GaussianPrior(mean, cov)
    op = MatrixOp(a)
    truth = prior.sample(1, substream(seed, "truth"))[0]
    return Problem("linear-gaussian", prior, op.apply, op.vjp, truth=truth,
                   extras={"matrix": a, "covariance": cov})


def posterior_mean(problem, y, noise_var):
    """Closed-form Gaussian conditioning for the linear-Gaussian problem."""
    a, cov, mean = problem.extras["matrix"], problem.extras["covariance"], problem.prior.mean
    s = a @ cov @ a.T + noise_var * np.eye(a.shape[0])
    return mean + cov @ a.T @ np.linalg.solve(s, y - a @ mean)


def gmm_toy(seed, weights=(0.5, 0.5), means=(-2.0, 2.0), variances=(0.25, 0.25)):
    """1-D two-mode mixture observed through the identity."""
    prior = GaussianMixturePrior(np.asarray(weights), np.asarray(means, dtype=float)[:, None],
                                 np.asarray(variances))
    truth = prior.sample(1, substream(seed, "truth"))[0]
    return Problem("gmm-toy", prior, lambda x: np.array(x, dtype=float), lambda x, v: v, truth=truth)


def phase_retrieval(seed, shape=(8, 8), tau=3.0, alpha=2.0, amplitude=1.0, pad_factor=2):
    prior = GRFPrior(shape, tau, alpha, amplitude)
    op = PhaseRetrieval(shape, pad_factor)
    truth = np.asarray(grf_sample(shape, tau, alpha, amplitude, seed=substream(seed, "truth"))).ravel()
    return Problem("phase-retrieval", prior, op, op.vjp, field_shape=tuple(shape), truth=truth)


def navier_stokes(seed, shape=(32, 32), tau=3.0, alpha=2.0, amplitude=1.0, factor=2, ns=None):
    """GRF initial vorticity, subsampled terminal vorticity (no adjoint)."""
    prior = GRFPrior(shape, tau, alpha, amplitude)
    op = NavierStokesForward(shape, NsConfig() if ns is None else ns, factor)
    truth = np.asarray(grf_sample(shape, tau, alpha, amplitude, seed=substream(seed, "truth"))).ravel()
    return Problem("navier-stokes", prior, op, None, field_shape=tuple(shape), truth=truth)
