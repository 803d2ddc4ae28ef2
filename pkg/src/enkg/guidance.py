"""Prediction-correction guidance and the ensemble Kalman corrector.

The sampler alternates an unconditional PF-ODE step with a likelihood
correction. The ensemble corrector never forms the n x n covariance: each
particle moves by ``(1/J) sum_k <G_k - G_bar, y - G_j>_Gamma (x_k - x_bar)``,
computed as a J x J coefficient matrix times the J x n deviation block.
"""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ._validation import as_batch, as_rng, check_positive, check_positive_int
from .exceptions import InvalidArgumentError, NumericalAbort, UnsupportedOperation
from .prior import OdeSolverConfig, pf_ode_solve, pf_ode_step, score_evaluations, solve_cost

logger = logging.getLogger(__name__)

STEP_RULES = ("trace", "adaptive", "adaptive-particle", "frobenius")

RUNLOG_COLUMNS = (
    "iter",
    "t",
    "w_i",
    "tr_cxx_proxy",
    "tr_cyy",
    "mean_residual",
    "fwd_evals_total",
    "dm_evals_total",
)


class ObservationModel:
    """Black-box forward map ``G`` with data ``y`` and diagonal noise covariance.

    ``forward`` maps a batch ``(B, n)`` to ``(B, m)``. Every row evaluated is
    counted in ``n_evals``. ``vjp(x, v)``, when given, returns ``DG(x)^T v``
    row by row; only the exact-gradient corrector needs it.
    """

    def __init__(self, forward, y, gamma=1.0, vjp=None, workers=1):
        self.forward = forward
        self.y = np.asarray(y, dtype=float).ravel()
        gamma = np.asarray(gamma, dtype=float)
        self.gamma = np.broadcast_to(gamma, self.y.shape).copy()
        if np.any(~np.isfinite(self.gamma)) or np.any(self.gamma <= 0):
            raise InvalidArgumentError("noise variances must be strictly positive")
        self.vjp = vjp
        self.workers = check_positive_int(workers, "workers")
        self.n_evals = 0

    @property
    def dim(self):
        return self.y.size

    def _evaluate(self, x):
        if self.workers == 1 or x.shape[0] < 2:
            return np.asarray(self.forward(x), dtype=float)
        chunks = np.array_split(x, min(self.workers, x.shape[0]))
        with ThreadPoolExecutor(self.workers) as pool:
            parts = list(pool.map(lambda c: np.asarray(self.forward(c), dtype=float), chunks))
        return np.concatenate(parts, axis=0)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._evaluate(x).reshape(x.shape[0], -1)
        self.n_evals += x.shape[0]
        if out.shape[1] != self.dim:
            raise InvalidArgumentError(
                f"forward model returned {out.shape[1]} values, expected {self.dim}"
            )
        bad = ~np.all(np.isfinite(out), axis=1)
        if np.any(bad):
            index = int(np.flatnonzero(bad)[0])
            raise NumericalAbort(f"non-finite forward output for row {index}", index=index)
        return out

    def inner(self, a, b):
        return np.sum(a * b / self.gamma, axis=-1)

    def misfit(self, g):
        """||y - g||_Gamma for each row of ``g``."""
        r = self.y - g
        return np.sqrt(self.inner(r, r))

    def log_likelihood(self, x):
        r = self.y - self(x)
        return -0.5 * self.inner(r, r)

    def grad_log_likelihood(self, x):
        if self.vjp is None:
            raise UnsupportedOperation("the forward model has no adjoint (vjp)")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = (self.y - self(x)) / self.gamma
        return np.asarray(self.vjp(x, r), dtype=float).reshape(x.shape)


@dataclass
class EnsembleStats:
    x_mean: np.ndarray
    deviations: np.ndarray  # (J, n) x_j - x_mean
    g_values: np.ndarray  # (J, m)
    g_mean: np.ndarray
    residuals: np.ndarray  # (J, m) y - g_j
    cyy_trace: float

    @property
    def n_particles(self):
        return self.deviations.shape[0]


def _mean(rows):
    # identical rows must give exactly zero deviations, which a rounded mean does not
    if np.all(rows == rows[0]):
        return rows[0].copy()
    return rows.mean(axis=0)


def ensemble_stats(particles, g_values, obs):
    """Empirical statistics of particles and their forward values."""
    particles = np.asarray(particles, dtype=float)
    g_values = np.asarray(g_values, dtype=float)
    x_mean = _mean(particles)
    g_mean = _mean(g_values)
    dg = g_values - g_mean
    cyy = float(np.mean(obs.inner(dg, dg)))
    return EnsembleStats(
        x_mean=x_mean,
        deviations=particles - x_mean,
        g_values=g_values,
        g_mean=g_mean,
        residuals=obs.y - g_values,
        cyy_trace=cyy,
    )


def spread(particles):
    """Mean squared deviation from the ensemble mean, i.e. tr of the covariance."""
    dev = particles - _mean(particles)
    return float(np.mean(np.sum(dev * dev, axis=1)))


def kalman_increments(stats, obs):
    """Per-particle increments (1/J) sum_k <dG_k, r_j>_Gamma dX_k, shape (J, n)."""
    dg = stats.g_values - stats.g_mean
    coeff = (stats.residuals / obs.gamma) @ dg.T  # coeff[j, k] = <dG_k, r_j>
    return coeff @ stats.deviations / stats.n_particles


def step_size(stats, rule="trace", guidance_scale=1.0, obs=None):
    """Correction step w_i, or ``None`` when the ensemble has collapsed.

    ``trace``: scale / tr(C_yy). ``adaptive``: scale * J^2 / sqrt(sum_k
    ||dG_k||^2 * sum_k ||r_k||^2). ``adaptive-particle`` returns one step
    per particle, using ||r_j|| in place of the second sum. ``frobenius``:
    scale / ||D||_F with D[j, k] = <dG_k, r_j> / J. Norms are Gamma-weighted;
    ``obs`` supplies Gamma (identity when omitted).

    The two ``adaptive`` rules grow linearly with J relative to the others,
    so their guidance scale must shrink accordingly.
    """
    if rule not in STEP_RULES:
        raise InvalidArgumentError(f"unknown step rule {rule!r}")
    gamma = 1.0 if obs is None else obs.gamma
    dg = stats.g_values - stats.g_mean
    if rule == "trace":
        cyy = float(np.mean(np.sum(dg * dg / gamma, axis=1)))
        return None if cyy == 0 else guidance_scale / cyy
    j = stats.n_particles
    if rule == "frobenius":
        norm = float(np.linalg.norm((stats.residuals / gamma) @ dg.T)) / j
        return None if norm == 0 else guidance_scale / norm
    spread_g = float(np.sum(dg * dg / gamma))
    res = np.sum(stats.residuals**2 / gamma, axis=1)
    if rule == "adaptive":
        denom = math.sqrt(spread_g * float(np.sum(res)))
        return None if denom == 0 else guidance_scale * j**2 / denom
    denom = np.sqrt(spread_g * res)
    if np.all(denom == 0):
        return None
    with np.errstate(divide="ignore"):
        return np.where(denom > 0, guidance_scale * j**2 / denom, 0.0)


def enkg_correction(particles, stats, obs, w):
    """Apply x_j + w * g_j; returns the particles unchanged if tr(C_yy) = 0."""
    particles = np.asarray(particles, dtype=float)
    if stats.cyy_trace == 0 or w is None:
        return particles.copy()
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise InvalidArgumentError("step size must be non-negative")
    inc = kalman_increments(stats, obs)
    return particles + (w[:, None] if w.ndim else w) * inc


def push_to_data_manifold(particles, prior, t, solver=OdeSolverConfig()):
    """Run the PF-ODE from time ``t`` to 0 for every particle."""
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    if t < 0:
        raise InvalidArgumentError("t must be non-negative")
    if t == 0:
        return particles.copy()
    out = pf_ode_solve(prior, particles, t, solver)
    bad = ~np.all(np.isfinite(out), axis=1)
    if np.any(bad):
        index = int(np.flatnonzero(bad)[0])
        raise NumericalAbort(f"PF-ODE solve diverged for particle {index}", index=index)
    return out


def exact_gradient_correction(x, obs=None, grad_log_lik=None, w=1.0):
    """Gradient ascent step x + w * grad log p(y | x) using an analytic adjoint."""
    if grad_log_lik is None:
        if obs is None:
            raise InvalidArgumentError("need obs or grad_log_lik")
        grad_log_lik = obs.grad_log_likelihood
    x = np.asarray(x, dtype=float)
    if w == 0:
        return x.copy()
    return x + w * np.asarray(grad_log_lik(x)).reshape(x.shape)


@dataclass
class GuidanceConfig:
    """Corrector settings. Heun prediction keeps the predicted ensemble on the
    same flow the likelihood push integrates."""

    step_rule: str = "trace"
    guidance_scale: float = 2.0
    corrections_per_step: int = 1
    likelihood_solver: OdeSolverConfig = field(default_factory=OdeSolverConfig)
    prediction_method: str = "heun"

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise InvalidArgumentError(f"unknown step rule {self.step_rule!r}")
        check_positive(self.guidance_scale, "guidance_scale")
        check_positive_int(self.corrections_per_step, "corrections_per_step")
        if self.prediction_method not in ("euler", "heun"):
            raise InvalidArgumentError(f"unknown prediction method {self.prediction_method!r}")


@dataclass
class RunLog:
    """Per-iteration diagnostics and the forward / diffusion evaluation counts."""

    rows: List[dict] = field(default_factory=list)
    events: List[str] = field(default_factory=list)
    fwd_evals: int = 0
    dm_evals: int = 0
    corrections: int = 0
    seq_fwd: int = 0
    seq_dm: int = 0

    def record(self, **values):
        row = {key: values.get(key, float("nan")) for key in RUNLOG_COLUMNS}
        row["fwd_evals_total"] = self.fwd_evals
        row["dm_evals_total"] = self.dm_evals
        self.rows.append(row)

    def event(self, message):
        # repeated collapse events are expected once an ensemble has converged
        (logger.debug if self.events else logger.warning)(message)
        self.events.append(message)

    def column(self, name):
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_csv(self, path_or_file):
        if hasattr(path_or_file, "write"):
            return self._write(path_or_file)
        with open(path_or_file, "w", newline="") as fh:
            self._write(fh)

    def _write(self, fh):
        writer = csv.DictWriter(fh, fieldnames=RUNLOG_COLUMNS, lineterminator="\r\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})

    @classmethod
    def from_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                log.rows.append(
                    {k: (int(v) if k in ("iter", "fwd_evals_total", "dm_evals_total") else float(v))
                     for k, v in row.items()}
                )
        if log.rows:
            log.fwd_evals = log.rows[-1]["fwd_evals_total"]
            log.dm_evals = log.rows[-1]["dm_evals_total"]
        return log


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class EnKGCorrector:
    """Ensemble Kalman correction with statistics from the predicted ensemble."""

    def __init__(self, prior, obs, cfg):
        self.prior, self.obs, self.cfg = prior, obs, cfg

    def __call__(self, x_prev, x_pred, t, t_next, log):
        j = x_pred.shape[0]
        if j == 1:
            return x_pred, {}
        x_hat = push_to_data_manifold(x_pred, self.prior, t_next, self.cfg.likelihood_solver)
        if t_next > 0:
            log.dm_evals += j * solve_cost(self.cfg.likelihood_solver)
            log.seq_dm += solve_cost(self.cfg.likelihood_solver)
        g = self.obs(x_hat)
        log.fwd_evals += j
        log.seq_fwd += 1
        log.corrections += 1
        stats = ensemble_stats(x_pred, g, self.obs)
        w = step_size(stats, self.cfg.step_rule, self.cfg.guidance_scale, self.obs)
        info = {
            "tr_cyy": stats.cyy_trace,
            "mean_residual": float(np.mean(self.obs.misfit(g))),
        }
        if w is None or stats.cyy_trace == 0:
            if spread(x_pred) > 0:
                log.event(f"tr(C_yy) = 0 with non-zero spread at t={t_next:.6g}; correction skipped")
            info["w_i"] = 0.0
            return x_pred, info
        info["w_i"] = float(np.mean(w))
        return enkg_correction(x_pred, stats, self.obs, w), info


class ExactGradientCorrector:
    """Reference corrector: gradient of the likelihood at the ODE endpoint.

    The map from particle to ODE endpoint is frozen (identity Jacobian), so
    this is a plain gradient-guidance step evaluated on the data manifold.
    """

    def __init__(self, prior, obs, cfg, w=1.0):
        self.prior, self.obs, self.cfg, self.w = prior, obs, cfg, w

    def __call__(self, x_prev, x_pred, t, t_next, log):
        j = x_pred.shape[0]
        x_hat = push_to_data_manifold(x_pred, self.prior, t_next, self.cfg.likelihood_solver)
        if t_next > 0:
            log.dm_evals += j * solve_cost(self.cfg.likelihood_solver)
            log.seq_dm += solve_cost(self.cfg.likelihood_solver)
        if self.obs.vjp is None:
            raise UnsupportedOperation("the forward model has no adjoint (vjp)")
        g = self.obs(x_hat)
        grad = np.asarray(self.obs.vjp(x_hat, (self.obs.y - g) / self.obs.gamma), dtype=float)
        log.fwd_evals += j
        log.seq_fwd += 1
        log.corrections += 1
        out = exact_gradient_correction(x_pred, grad_log_lik=lambda _: grad, w=self.w)
        return out, {"w_i": self.w, "mean_residual": float(np.mean(self.obs.misfit(g)))}


@dataclass
class PCResult:
    particles: np.ndarray
    log: RunLog

    @property
    def estimate(self):
        return self.particles.mean(axis=0)


def initial_particles(n_particles, dim, sigma_max, random_state):
    return sigma_max * random_state.standard_normal((n_particles, dim))


def run_pc(prior, obs, grid, corrector="enkg", cfg=None, random_state=None,
           n_particles=1, init=None):
    """Generic prediction-correction sampler.

    ``corrector`` is ``"enkg"``, ``"exact-grad"``, ``None`` (unconditional
    sampling) or a callable with the corrector signature
    ``(x_prev, x_pred, t, t_next, log) -> (x_next, info)``.
    """
    cfg = GuidanceConfig() if cfg is None else cfg
    rng = as_rng(random_state)
    if init is None:
        particles = initial_particles(n_particles, prior.dim, grid.times[0], rng)
    else:
        particles, _ = as_batch(init, prior.dim, "init")
        particles = particles.copy()
    j = particles.shape[0]
    if corrector == "enkg":
        corrector = EnKGCorrector(prior, obs, cfg)
        if j == 1:
            logger.warning("a single particle has no spread: EnKG reduces to unconditional sampling")
    elif corrector == "exact-grad":
        corrector = ExactGradientCorrector(prior, obs, cfg, w=cfg.guidance_scale)

    log = RunLog()
    for i, (t, t_next) in enumerate(grid.pairs()):
        x_pred = pf_ode_step(prior, particles, t, t_next, cfg.prediction_method)
        calls = score_evaluations(cfg.prediction_method, t_next)
        log.dm_evals += j * calls
        log.seq_dm += calls
        info = {}
        if corrector is not None:
            for _ in range(cfg.corrections_per_step):
                x_pred, info = corrector(particles, x_pred, t, t_next, log)
        particles = x_pred
        if not np.all(np.isfinite(particles)):
            index = int(np.flatnonzero(~np.all(np.isfinite(particles), axis=1))[0])
            raise NumericalAbort(f"non-finite particle {index} at iteration {i}", iteration=i, index=index)
        log.record(iter=i, t=t_next, tr_cxx_proxy=spread(particles), **info)
    return PCResult(particles, log)
