"""Forward models: linear operators, phase retrieval, GRF fields, Navier-Stokes."""
from .grf import grf_sample
from .linear import Identity, MatrixOp, Mask, SpectralBlur, Subsample, adjoint, apply
from .navier_stokes import (
    NavierStokesForward,
    NsConfig,
    VorticityField,
    default_forcing,
    ns_forward,
    ns_solve,
)
from .phase import PhaseRetrieval, phase_retrieval_forward

__all__ = [
    "Identity",
    "MatrixOp",
    "Mask",
    "SpectralBlur",
    "Subsample",
    "apply",
    "adjoint",
    "grf_sample",
    "NavierStokesForward",
    "NsConfig",
    "VorticityField",
    "default_forcing",
    "ns_forward",
    "ns_solve",
    "PhaseRetrieval",
    "phase_retrieval_forward",
]
