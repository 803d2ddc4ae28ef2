"""Fourier-magnitude (phase retrieval) forward model."""
import numpy as np

from .._validation import as_batch, check_positive_int, unbatch
from ..exceptions import InvalidArgumentError


class PhaseRetrieval:
    """|DFT| of an image zero-padded to ``pad_factor`` times its size.

    The image sits in the top-left corner of the padded canvas; the output
    is the flattened magnitude of the unnormalised 2-D DFT.
    """

    def __init__(self, shape, pad_factor=2):
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) != 2:
            raise InvalidArgumentError("phase retrieval needs a 2-D image shape")
        self.pad_factor = check_positive_int(pad_factor, "pad_factor")
        self.padded = (self.shape[0] * self.pad_factor, self.shape[1] * self.pad_factor)
        self.in_dim = self.shape[0] * self.shape[1]
        self.out_dim = self.padded[0] * self.padded[1]

    def _spectrum(self, x):
        return np.fft.fft2(x.reshape((-1,) + self.shape), s=self.padded)

    def __call__(self, x):
        x, single = as_batch(x, self.in_dim)
        mag = np.abs(self._spectrum(x)).reshape(x.shape[0], self.out_dim)
        return unbatch(mag, single)

    def vjp(self, x, v):
        """Transpose Jacobian of the magnitude map at ``x`` applied to ``v``.

        Frequencies with zero magnitude contribute nothing (a subgradient).
        """
        x, single = as_batch(x, self.in_dim)
        v, _ = as_batch(v, self.out_dim, "v")
        z = self._spectrum(x)
        mag = np.abs(z)
        phase = np.divide(z, mag, out=np.zeros_like(z), where=mag > 0)
        weighted = v.reshape(z.shape) * phase
        # conj(F) y = size * ifft(y) for the unnormalised DFT
        back = np.fft.ifft2(weighted) * (self.padded[0] * self.padded[1])
        out = back.real[:, : self.shape[0], : self.shape[1]]
        return unbatch(out.reshape(x.shape[0], self.in_dim), single)


def phase_retrieval_forward(x, shape, pad_factor=2):
    return PhaseRetrieval(shape, pad_factor)(x)
