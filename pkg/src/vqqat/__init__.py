"""Vector-quantization-aware training of small classifiers.

Cosine-assignment VQ with projection scaling, hard-attention VQ with
straight-through gradients, and layer-wise VQ/LQ architecture search.
"""
from vqqat.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
