"""phasekit: phase retrieval from magnitude-only measurements.

Measurement models (|Fx| and compressive Gaussian |Ax|), classical
projection solvers (GS, HIO, RAAR), learned pipelines (end-to-end MLP,
generative-prior latent optimization, conditional adversarial generators
with optional refinement), a small from-scratch neural network engine,
and a registration-aware evaluation harness.
"""

__version__ = "0.1.0"

from .numerics import RandomStream, dft2, idft2  # noqa: F401
