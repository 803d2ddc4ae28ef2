"""Pseudo-spectral solver for 2-D incompressible Navier-Stokes in vorticity form.

Solves ``w_t + u . grad(w) = nu * lap(w) + f`` on the torus (0, 2*pi)^2 with
``u = (d_y psi, -d_x psi)`` and ``-lap(psi) = w``. Viscosity is treated with
Crank-Nicolson, advection and forcing with Heun's method (second order
overall). Array axis 0 is x, axis 1 is y.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import fft as sfft

from .._spectral import wavenumbers
from .._validation import check_positive, check_positive_int
from ..exceptions import InvalidArgumentError, NumericalAbort
from .linear import Subsample

__all__ = [
    "VorticityField",
    "NsConfig",
    "default_forcing",
    "ns_solve",
    "ns_forward",
    "NavierStokesForward",
]


class VorticityField:
    """Real periodic scalar field with a lazily cached half-spectrum."""

    def __init__(self, values):
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise InvalidArgumentError("a vorticity field is a 2-D array")
        self.values = values
        self._spectral = None

    @classmethod
    def from_spectral(cls, coeffs, shape):
        field = cls(sfft.irfft2(coeffs, s=tuple(shape)))
        field._spectral = np.array(coeffs, dtype=complex)
        return field

    @property
    def shape(self):
        return self.values.shape

    @property
    def nx(self):
        return self.values.shape[0]

    @property
    def ny(self):
        return self.values.shape[1]

    @property
    def spectral(self):
        if self._spectral is None:
            self._spectral = sfft.rfft2(self.values)
        return self._spectral

    def ravel(self):
        return self.values.ravel()

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def grid_coordinates(shape):
    nx, ny = shape
    x = 2 * np.pi * np.arange(nx) / nx
    y = 2 * np.pi * np.arange(ny) / ny
    return np.meshgrid(x, y, indexing="ij")


def default_forcing(shape):
    """0.1 (sin(x + y) + cos(x + y))."""
    x, y = grid_coordinates(shape)
    return 0.1 * (np.sin(x + y) + np.cos(x + y))


@dataclass
class NsConfig:
    """Solver settings. ``dt=None`` picks a step from the CFL limit of the input.

    ``forcing`` is ``"default"``, ``"none"``, or an array on the grid.
    """

    nu: float = 1e-3
    t_end: float = 1.0
    dt: Optional[float] = None
    forcing: object = "default"
    dealias: bool = True
    cfl: float = 0.5
    cfl_max: float = 1.0
    max_dt: float = 0.05

    def __post_init__(self):
        check_positive(self.nu, "nu")
        check_positive(self.t_end, "t_end", allow_zero=True)
        if self.dt is not None:
            check_positive(self.dt, "dt")

    def forcing_field(self, shape):
        if isinstance(self.forcing, str):
            if self.forcing == "default":
                return default_forcing(shape)
            if self.forcing == "none":
                return np.zeros(shape)
            raise InvalidArgumentError(f"unknown forcing preset {self.forcing!r}")
        f = np.asarray(self.forcing, dtype=float)
        if f.shape != tuple(shape):
            raise InvalidArgumentError("forcing array does not match the grid")
        return f


class _Operators:
    def __init__(self, shape, cfg):
        nx, ny = shape
        kx, ky = wavenumbers(shape)
        self.k2 = kx**2 + ky**2
        self.k2_inv = np.divide(1.0, self.k2, out=np.zeros_like(self.k2), where=self.k2 > 0)
        # odd derivatives drop the Nyquist modes to stay real
        self.dkx = np.where(np.abs(kx) == nx // 2, 0.0, kx) if nx % 2 == 0 else kx
        self.dky = np.where(np.abs(ky) == ny // 2, 0.0, ky) if ny % 2 == 0 else ky
        if cfg.dealias:
            self.mask = (np.abs(kx) <= nx / 3.0) & (np.abs(ky) <= ny / 3.0)
        else:
            self.mask = np.ones_like(self.k2, dtype=bool)
        self.shape = tuple(shape)
        self.dx = 2 * np.pi / nx
        self.dy = 2 * np.pi / ny

    def irfft(self, z):
        return sfft.irfft2(z, s=self.shape)

    def velocity(self, w_hat):
        psi_hat = w_hat * self.k2_inv
        return self.irfft(1j * self.dky * psi_hat), self.irfft(-1j * self.dkx * psi_hat)

    def advection(self, w_hat):
        u, v = self.velocity(w_hat)
        wx = self.irfft(1j * self.dkx * w_hat)
        wy = self.irfft(1j * self.dky * w_hat)
        n_hat = sfft.rfft2(u * wx + v * wy) * self.mask
        n_hat[..., 0, 0] = 0.0
        return n_hat, u, v

    def cfl_number(self, u, v, dt):
        axes = (-2, -1)
        return float(np.max(np.abs(u).max(axis=axes) / self.dx + np.abs(v).max(axis=axes) / self.dy) * dt)


def ns_solve(w0, cfg=None):
    """Integrate from ``w0`` to ``cfg.t_end``.

    ``w0`` is a :class:`VorticityField` (returned type matches) or an array
    of shape ``(..., nx, ny)``; leading axes are solved independently with
    one shared time step.
    """
    cfg = NsConfig() if cfg is None else cfg
    as_field = isinstance(w0, VorticityField)
    w = np.array(w0.values if as_field else w0, dtype=float)
    if w.ndim < 2:
        raise InvalidArgumentError("w0 must have at least two dimensions")
    shape = w.shape[-2:]
    if cfg.t_end == 0:
        return VorticityField(w) if as_field else w
    ops = _Operators(shape, cfg)
    f_hat = sfft.rfft2(cfg.forcing_field(shape))
    w_hat = sfft.rfft2(w)
    lin = -cfg.nu * ops.k2

    n_hat, u, v = ops.advection(w_hat)
    if cfg.dt is None:
        speed = ops.cfl_number(u, v, 1.0)
        dt = cfg.max_dt if speed == 0 else min(cfg.cfl / speed, cfg.max_dt)
        n_steps = max(1, math.ceil(cfg.t_end / dt - 1e-12))
    else:
        n_steps = max(1, round(cfg.t_end / cfg.dt))
        if abs(n_steps * cfg.dt - cfg.t_end) > 1e-9 * cfg.t_end:
            raise InvalidArgumentError(f"dt={cfg.dt} does not divide t_end={cfg.t_end}")
    dt = cfg.t_end / n_steps
    explicit = 1.0 + 0.5 * dt * lin
    implicit = 1.0 / (1.0 - 0.5 * dt * lin)

    for step in range(n_steps):
        cfl = ops.cfl_number(u, v, dt)
        if not np.isfinite(cfl) or cfl > cfg.cfl_max:
            umax = float(np.max(np.hypot(u, v)))
            raise NumericalAbort(
                f"CFL number {cfl:.3g} exceeds {cfg.cfl_max} at step {step} "
                f"(max velocity {umax:.3g}, dt {dt:.3g})",
                iteration=step,
            )
        base = explicit * w_hat + dt * f_hat
        w_pred = (base - dt * n_hat) * implicit
        n_pred, _, _ = ops.advection(w_pred)
        w_hat = (base - 0.5 * dt * (n_hat + n_pred)) * implicit
        n_hat, u, v = ops.advection(w_hat)

    if not np.all(np.isfinite(w_hat)):
        raise NumericalAbort("non-finite vorticity spectrum", iteration=n_steps)
    out = ops.irfft(w_hat)
    return VorticityField(out) if as_field else out


def ns_forward(w0, cfg=None, factor=2):
    """Subsampled terminal vorticity, flattened row-major.

    ``w0`` is a field or an array of shape ``(..., nx, ny)``; the result has
    shape ``(..., m)``.
    """
    arr = np.asarray(w0.values if isinstance(w0, VorticityField) else w0, dtype=float)
    if arr.ndim < 2:
        raise InvalidArgumentError("w0 must have at least two dimensions")
    sampler = Subsample(arr.shape[-2:], factor)
    final = ns_solve(arr, cfg)
    lead = arr.shape[:-2]
    out = sampler.apply(final.reshape((-1, sampler.in_dim)))
    return out.reshape(lead + (sampler.out_dim,))


class NavierStokesForward:
    """Black-box map from flattened initial vorticity to subsampled final vorticity."""

    def __init__(self, shape, cfg=None, factor=2):
        self.shape = tuple(int(s) for s in shape)
        self.cfg = NsConfig() if cfg is None else cfg
        self.factor = check_positive_int(factor, "factor")
        self.sampler = Subsample(self.shape, self.factor)
        self.in_dim = self.sampler.in_dim
        self.out_dim = self.sampler.out_dim

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        batch = x.reshape((-1,) + self.shape)
        final = ns_solve(batch, self.cfg).reshape(batch.shape[0], -1)
        out = self.sampler.apply(final)
        return out[0] if single else out
