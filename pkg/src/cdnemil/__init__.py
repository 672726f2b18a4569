"""Attention-based multiple-instance learning with a compact, debiased
negative-embedding auxiliary objective."""
from ._kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
__version__ = "0.1.0"
