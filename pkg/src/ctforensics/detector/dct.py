"""Orthonormal type-II 2D DCT, the alternative detector input."""

import numpy as np
from scipy import fft

from ..errors import ShapeError


def dct2d(patch):
    """DCT-II over the last two axes with orthonormal scaling (works on stacks too)."""
    a = np.asarray(patch, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"dct2d expects square patches, got shape {a.shape}")
    return fft.dctn(a, type=2, norm="ortho", axes=(-2, -1))


def idct2d(coeffs):
    a = np.asarray(coeffs, dtype=np.float64)
    return fft.idctn(a, type=2, norm="ortho", axes=(-2, -1))
