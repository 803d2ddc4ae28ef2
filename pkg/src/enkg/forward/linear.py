"""Linear observation operators with exact adjoints.

Operators act on flattened vectors (or batches of them, leading axis first).
"""
import numpy as np

from .._validation import as_batch, check_positive_int, unbatch
from ..exceptions import InvalidArgumentError

__all__ = ["Identity", "Mask", "Subsample", "SpectralBlur", "MatrixOp", "apply", "adjoint"]


class LinearOp:
    in_dim: int
    out_dim: int

    def apply(self, x):
        x, single = as_batch(x, self.in_dim)
        return unbatch(self._apply(x), single)

    def adjoint(self, z):
        z, single = as_batch(z, self.out_dim, "z")
        return unbatch(self._adjoint(z), single)

    __call__ = apply

    def vjp(self, x, v):
        """Transpose-Jacobian action; ``x`` is unused for a linear map."""
        return self.adjoint(v)


class Identity(LinearOp):
    def __init__(self, dim):
        self.in_dim = self.out_dim = check_positive_int(dim, "dim")

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, z):
        return z.copy()


class Mask(LinearOp):
    """Keep the entries in ``indices`` (an index array or boolean mask)."""

    def __init__(self, dim, indices):
        self.in_dim = check_positive_int(dim, "dim")
        idx = np.asarray(indices)
        if idx.dtype == bool:
            if idx.size != dim:
                raise InvalidArgumentError("boolean mask length must equal dim")
            idx = np.flatnonzero(idx)
        idx = np.unique(idx.astype(int))
        if idx.size == 0 or idx[0] < 0 or idx[-1] >= dim:
            raise InvalidArgumentError("mask indices out of range")
        self.indices = idx
        self.out_dim = idx.size

    def _apply(self, x):
        return x[:, self.indices]

    def _adjoint(self, z):
        out = np.zeros((z.shape[0], self.in_dim))
        out[:, self.indices] = z
        return out


class Subsample(LinearOp):
    """Keep every ``factor``-th grid point along both axes of a 2-D field."""

    def __init__(self, shape, factor=2):
        self.shape = tuple(int(s) for s in shape)
        self.factor = check_positive_int(factor, "factor")
        if any(s % self.factor for s in self.shape):
            raise InvalidArgumentError(
                f"subsample factor {factor} does not divide grid {self.shape}"
            )
        self.in_dim = self.shape[0] * self.shape[1]
        self.out_shape = (self.shape[0] // self.factor, self.shape[1] // self.factor)
        self.out_dim = self.out_shape[0] * self.out_shape[1]

    def _apply(self, x):
        grid = x.reshape((-1,) + self.shape)
        return grid[:, :: self.factor, :: self.factor].reshape(x.shape[0], self.out_dim)

    def _adjoint(self, z):
        out = np.zeros((z.shape[0],) + self.shape)
        out[:, :: self.factor, :: self.factor] = z.reshape((-1,) + self.out_shape)
        return out.reshape(z.shape[0], self.in_dim)


class SpectralBlur(LinearOp):
    """Circular convolution given by a Fourier transfer function.

    Pass either ``transfer`` (full fft2 layout, Hermitian-symmetric so real
    inputs stay real) or ``width`` for a Gaussian kernel of that standard
    deviation in grid units.
    """

    def __init__(self, shape, transfer=None, width=None):
        self.shape = tuple(int(s) for s in shape)
        self.in_dim = self.out_dim = self.shape[0] * self.shape[1]
        if (transfer is None) == (width is None):
            raise InvalidArgumentError("give exactly one of transfer or width")
        if transfer is None:
            kx = np.fft.fftfreq(self.shape[0])[:, None]
            ky = np.fft.fftfreq(self.shape[1])[None, :]
            transfer = np.exp(-2.0 * np.pi**2 * width**2 * (kx**2 + ky**2))
        transfer = np.asarray(transfer, dtype=complex)
        if transfer.shape != self.shape:
            raise InvalidArgumentError("transfer function shape does not match grid")
        mirrored = np.roll(transfer[::-1, ::-1], 1, axis=(0, 1))
        if not np.allclose(mirrored, np.conj(transfer), atol=1e-12):
            raise InvalidArgumentError("transfer function must be Hermitian-symmetric")
        self.transfer = transfer

    def _filter(self, x, transfer):
        grid = x.reshape((-1,) + self.shape)
        out = np.fft.ifft2(np.fft.fft2(grid) * transfer).real
        return out.reshape(x.shape[0], self.in_dim)

    def _apply(self, x):
        return self._filter(x, self.transfer)

    def _adjoint(self, z):
        return self._filter(z, np.conj(self.transfer))


class MatrixOp(LinearOp):
    """Dense matrix operator, mostly for small test problems."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise InvalidArgumentError("matrix must be 2-D")
        self.out_dim, self.in_dim = self.matrix.shape

    def _apply(self, x):
        return x @ self.matrix.T

    def _adjoint(self, z):
        return z @ self.matrix


def apply(op, x):
    return op.apply(x)


def adjoint(op, z):
    return op.adjoint(z)
