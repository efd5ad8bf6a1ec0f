"""Desk-scale MRF toolkit: simulation, undersampling, matching, and learning."""

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad"]
__version__ = "0.1.0"
