"""Quantization-based local differential privacy for distributed online optimization."""

from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
