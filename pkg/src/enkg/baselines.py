"""Derivative-free baselines: ensemble Kalman inversion and GSG guidance.

Both share the corrector bookkeeping of :mod:`enkg.guidance`, so forward and
diffusion evaluation counts are comparable across methods.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import as_batch, as_rng, check_positive, check_positive_int
from .exceptions import InvalidArgumentError, NumericalAbort
from .guidance import (
    STEP_RULES,
    PCResult,
    RunLog,
    enkg_correction,
    ensemble_stats,
    initial_particles,
    spread,
    step_size,
)

__all__ = [
    "GsgConfig",
    "EkiConfig",
    "gsg_directions",
    "gsg_estimate",
    "gsg_guided_run",
    "eki_run",
]

GSG_VARIANTS = ("forward", "central")


@dataclass
class GsgConfig:
    mu: float = 1e-3
    q: int = 10_000
    variant: str = "forward"
    seed: Optional[int] = None

    def __post_init__(self):
        check_positive(self.mu, "mu")
        self.q = check_positive_int(self.q, "q")
        if self.variant not in GSG_VARIANTS:
            raise InvalidArgumentError(f"unknown GSG variant {self.variant!r}")

    @property
    def evals_per_estimate(self):
        return self.q + 1 if self.variant == "forward" else 2 * self.q


@dataclass
class EkiConfig:
    iterations: int = 100
    step_rule: str = "trace"
    guidance_scale: float = 1.0

    def __post_init__(self):
        self.iterations = check_positive_int(self.iterations, "iterations")
        if self.step_rule not in STEP_RULES:
            raise InvalidArgumentError(f"unknown step rule {self.step_rule!r}")
        check_positive(self.guidance_scale, "guidance_scale")


def gsg_directions(dim, cfg, random_state=None):
    """The ``(Q, dim)`` standard normal probe directions for one estimate."""
    rng = as_rng(cfg.seed if random_state is None else random_state)
    return rng.standard_normal((cfg.q, dim))


def _values(f, points, vectorized):
    if vectorized:
        vals = np.asarray(f(points), dtype=float).reshape(-1)
    else:
        vals = np.array([float(f(p)) for p in points])
    bad = ~np.isfinite(vals)
    if np.any(bad):
        index = int(np.flatnonzero(bad)[0])
        raise NumericalAbort(f"non-finite objective at probe {index}", index=index)
    return vals


def gsg_estimate(f, x, cfg, random_state=None, vectorized=False):
    """Gaussian-smoothed gradient of scalar ``f`` at ``x``.

    forward: sum_i (f(x + mu u_i) - f(x)) / mu * u_i / Q, Q + 1 evaluations.
    central: sum_i (f(x + mu u_i) - f(x - mu u_i)) / (2 mu) * u_i / Q, 2Q
    evaluations. Directions are drawn before any evaluation. With
    ``vectorized=True`` ``f`` maps a ``(B, n)`` batch to ``B`` values.
    Probe index 0 is ``x`` itself for the forward variant.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = gsg_directions(x.size, cfg, random_state)
    if cfg.variant == "forward":
        points = np.vstack([x[None, :], x + cfg.mu * u])
        vals = _values(f, points, vectorized)
        diffs = (vals[1:] - vals[0]) / cfg.mu
    else:
        points = np.vstack([x + cfg.mu * u, x - cfg.mu * u])
        vals = _values(f, points, vectorized)
        diffs = (vals[: cfg.q] - vals[cfg.q:]) / (2 * cfg.mu)
    return diffs @ u / cfg.q


def gsg_guided_run(prior, obs, grid, cfg, w=1.0, random_state=None, n_samples=1, init=None):
    """Guidance with a GSG likelihood gradient pulled back through the denoiser.

    Per iteration and sample: ``x0 = D(x, t)``, Euler prediction
    ``x' = x + (x - x0) / t * (t_next - t)``, a GSG estimate of
    ``grad log p(y | x0)`` and the update ``x' + w * J_D(x)^T grad``. The
    denoiser call and its Jacobian action count as one diffusion evaluation
    each.
    """
    w = check_positive(w, "w", allow_zero=True)
    rng = as_rng(random_state)
    probes = as_rng(cfg.seed) if cfg.seed is not None else rng
    if init is None:
        x = initial_particles(n_samples, prior.dim, grid.times[0], rng)
    else:
        x = as_batch(init, prior.dim, "init")[0].copy()

    def log_lik(z):
        r = obs.y - obs(z)
        return -0.5 * obs.inner(r, r)

    log = RunLog()
    b = x.shape[0]
    for i, (t, t_next) in enumerate(grid.pairs()):
        x0 = prior.denoise(x, t)
        x_pred = x + (x - x0) / t * (t_next - t)
        log.dm_evals += b
        log.seq_dm += 1
        info = {"w_i": w}
        if w > 0:
            grads = np.empty_like(x)
            before = obs.n_evals
            for s in range(b):
                grads[s] = gsg_estimate(log_lik, x0[s], cfg, probes, vectorized=True)
            log.fwd_evals += obs.n_evals - before
            log.seq_fwd += cfg.evals_per_estimate
            log.corrections += 1
            pulled = prior.denoiser_vjp(x, t, grads)
            log.dm_evals += b
            log.seq_dm += 1
            x_pred = x_pred + w * pulled
        x = x_pred
        if not np.all(np.isfinite(x)):
            index = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
            raise NumericalAbort(f"non-finite sample {index} at iteration {i}", iteration=i, index=index)
        log.record(iter=i, t=t_next, tr_cxx_proxy=spread(x), **info)
    return PCResult(x, log)


def eki_run(obs, init_ensemble, cfg=None):
    """Ensemble Kalman inversion: x_j += w * C_xy Gamma^-1 (y - G(x_j))."""
    cfg = EkiConfig() if cfg is None else cfg
    x = np.atleast_2d(np.asarray(init_ensemble, dtype=float)).copy()
    log = RunLog()
    j = x.shape[0]
    for i in range(cfg.iterations):
        g = obs(x)
        log.fwd_evals += j
        log.seq_fwd += 1
        log.corrections += 1
        stats = ensemble_stats(x, g, obs)
        w = step_size(stats, cfg.step_rule, cfg.guidance_scale, obs)
        info = {"tr_cyy": stats.cyy_trace, "mean_residual": float(np.mean(obs.misfit(g)))}
        if w is None:
            if spread(x) > 0:
                log.event(f"tr(C_yy) = 0 with non-zero spread at iteration {i}; correction skipped")
            info["w_i"] = 0.0
        else:
            info["w_i"] = float(np.mean(w))
            x = enkg_correction(x, stats, obs, w)
        if not np.all(np.isfinite(x)):
            index = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
            raise NumericalAbort(f"non-finite particle {index} at iteration {i}", iteration=i, index=index)
        log.record(iter=i, t=float("nan"), tr_cxx_proxy=spread(x), **info)
    return PCResult(x, log)
