"""Heterogeneous conversation-graph encoder-decoder for multi-party response generation."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
