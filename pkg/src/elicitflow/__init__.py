"""Simulation-based prior elicitation with normalizing flows.

Learn a non-parametric joint prior over model parameters by matching
model-implied elicited statistics (quantiles, moments, correlations) against
an expert-supplied set, with gradients flowing end to end through a coupling
flow, the generative model, and kernel-based discrepancies.
"""

__version__ = "0.1.0"

from .tensor import Tensor, ShapeError, DomainError

__all__ = ["Tensor", "ShapeError", "DomainError", "__version__"]
