"""Counted sparse matrix-vector and vector-vector kernels."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .counters import FlopCounter
from .multifrontal import DimensionError


def spmv(A: sp.spmatrix, x: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    """``A @ x``; charges ``nnz(A)`` multiply-adds to ``mv`` per column of ``x``."""
    if A.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {A.shape} by vector of length {x.shape[0]}")
    if counter is not None:
        k = 1 if x.ndim == 1 else x.shape[1]
        counter.add("mv", A.nnz * k, calls=k)
    return A @ x


def dot(x: np.ndarray, y: np.ndarray, counter: FlopCounter | None = None):
    """Conjugating inner product ``x^H y``."""
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    if counter is not None:
        counter.add("vv", x.shape[0])
    return np.vdot(x, y)


def axpy(a, x: np.ndarray, y: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
    """``a x + y`` (new array)."""
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    if counter is not None:
        counter.add("vv", x.shape[0])
    return a * x + y
