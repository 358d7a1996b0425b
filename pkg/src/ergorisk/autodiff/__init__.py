"""Minimal numpy tensor kernel with reverse-mode differentiation."""
from . import functional, nn
from .functional import clip_global_norm
from .rng import Rng
from .tensor import Tensor, as_tensor, default_dtype, no_grad, precision, set_debug

__all__ = [
    "Rng",
    "Tensor",
    "as_tensor",
    "clip_global_norm",
    "default_dtype",
    "functional",
    "nn",
    "no_grad",
    "precision",
    "set_debug",
]
