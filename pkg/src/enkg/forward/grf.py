"""Gaussian random field sampling with a Fourier-diagonal covariance."""
import numpy as np

from .._spectral import grf_eigenvalues, spectral_multiply
from .._validation import as_rng, check_positive
from ..exceptions import InvalidArgumentError
from .navier_stokes import VorticityField


def grf_sample(shape, tau=3.0, alpha=2.0, amplitude=1.0, seed=None, n_samples=None):
    """Draw mean-zero GRF fields with mode variances amplitude^2 (|k|^2+tau^2)^-alpha.

    Returns a :class:`VorticityField` for a single draw, or an array of shape
    ``(n_samples, nx, ny)`` when ``n_samples`` is given.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2 or any(s < 2 or s & (s - 1) for s in shape):
        raise InvalidArgumentError(f"grid sides must be powers of two, got {shape}")
    check_positive(tau, "tau")
    check_positive(amplitude, "amplitude", allow_zero=True)
    if not alpha > 1:
        raise InvalidArgumentError("alpha must exceed 1")
    rng = as_rng(seed)
    count = 1 if n_samples is None else int(n_samples)
    eig = grf_eigenvalues(shape, tau, alpha, amplitude)
    eig[0, 0] = 0.0
    z = rng.standard_normal((count, shape[0] * shape[1]))
    fields = spectral_multiply(z, np.sqrt(eig), shape).reshape((count,) + shape)
    if n_samples is None:
        return VorticityField(fields[0])
    return fields
