"""Derivative-free diffusion-guided inverse problem solvers."""
