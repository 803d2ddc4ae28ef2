"""Wavenumber grids on the periodic box (0, 2*pi)^2."""
import numpy as np
from scipy import fft as sfft


def wavenumbers(shape, half=True):
    """Integer wavenumbers (kx, ky) broadcastable to the (r)fft2 layout."""
    nx, ny = shape
    kx = sfft.fftfreq(nx, 1.0 / nx)[:, None]
    if half:
        ky = sfft.rfftfreq(ny, 1.0 / ny)[None, :]
    else:
        ky = sfft.fftfreq(ny, 1.0 / ny)[None, :]
    return kx, ky


def grf_eigenvalues(shape, tau, alpha, amplitude, half=True):
    """Eigenvalues amplitude^2 (|k|^2 + tau^2)^(-alpha) of the GRF covariance.

    The covariance acts on pixel vectors as F^H diag(eig) F with the unitary
    DFT, so ``eig[k]`` is the variance of Fourier mode ``k``.
    """
    kx, ky = wavenumbers(shape, half=half)
    return amplitude**2 * (kx**2 + ky**2 + tau**2) ** (-alpha)


def spectral_multiply(x, multiplier, shape):
    """Apply the real Fourier multiplier to a batch of flattened fields."""
    batch = x.reshape(x.shape[:-1] + tuple(shape))
    spec = sfft.rfft2(batch, norm="ortho")
    out = sfft.irfft2(spec * multiplier, s=tuple(shape), norm="ortho")
    return out.reshape(x.shape)
