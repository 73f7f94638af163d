"""Scaling, the shift-and-invert operator of the linearized pencil, and the B-inner product.

The quadratic pencil ``K + lam C + lam^2 M`` is linearized as ``A - lam B``
with ``A = [[0, I], [-K, -C]]`` and ``B = diag(I, M)``. Vectors of the
doubled space are kept as ``(upper, lower)`` pairs of length-N arrays and
``(A - sB)^{-1} B`` is applied through a single factorization of
``Q(s) = K + sC + s^2 M``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from ..assembly import QuadraticPencil
from ..sparsela import (Factorization, FlopCounter, Ordering, SingularMatrixError, dot, lu_factorize,
                        nested_dissection_order, spmv)


class ShiftCollisionError(SingularMatrixError):
    """``Q(s)`` is singular: the shift coincides with an eigenvalue."""


def _max_abs(A: sp.spmatrix) -> float:
    return float(np.max(np.abs(A.data))) if A.nnz else 0.0


def scale_pencil(pencil: QuadraticPencil) -> tuple[QuadraticPencil, float]:
    """Return ``(K, sC, s^2 M)`` with ``s = sqrt(max|K| / max|M|)`` and ``s``.

    Eigenvalues of the scaled pencil are ``lam / s``.
    """
    mk, mm = _max_abs(pencil.K), _max_abs(pencil.M)
    if mm == 0.0:
        raise ValueError("mass matrix is zero; cannot scale the pencil")
    if mk == 0.0:
        return pencil, 1.0
    s = float(np.sqrt(mk / mm))
    C = sp.csr_matrix((pencil.C.data * s, pencil.C.indices, pencil.C.indptr), shape=pencil.C.shape)
    M = sp.csr_matrix((pencil.M.data * s * s, pencil.M.indices, pencil.M.indptr), shape=pencil.M.shape)
    return replace(pencil, C=C, M=M, scale=pencil.scale * s), s


def default_ordering(pencil: QuadraticPencil) -> Ordering:
    """Geometric nested dissection when the space is known, reverse Cuthill-McKee otherwise."""
    sp_ = pencil.space
    if sp_ is not None and sp_.n_free == pencil.N:
        return nested_dissection_order(sp_)
    perm = reverse_cuthill_mckee(sp.csr_matrix(pencil.K), symmetric_mode=False)
    return Ordering(np.asarray(perm, dtype=np.int64), "rcm")


@dataclass
class ShiftInvertOperator:
    pencil: QuadraticPencil
    shift: complex
    factorization: Factorization
    scale: float = 1.0

    @property
    def N(self) -> int:
        return self.pencil.N

    @property
    def real(self) -> bool:
        """Operator maps real vectors to real vectors."""
        return self.pencil.real and complex(self.shift).imag == 0.0

    @property
    def dtype(self):
        return np.float64 if self.real else np.complex128

    @property
    def s(self):
        return complex(self.shift).real if self.real else complex(self.shift)


def build_operator(pencil: QuadraticPencil, s: complex, ordering: Ordering | None = None,
                   counter: FlopCounter | None = None, scale: float = 1.0) -> ShiftInvertOperator:
    """Factorize ``Q(s)`` once; ``s`` is given in the (possibly scaled) pencil's units."""
    if ordering is None:
        ordering = default_ordering(pencil)
    try:
        fact = lu_factorize(pencil.q(s), ordering, counter)
    except SingularMatrixError as exc:
        raise ShiftCollisionError(
            f"Q(s) is singular at s={complex(s) * scale}; the shift hits an eigenvalue, "
            "perturb it slightly") from exc
    return ShiftInvertOperator(pencil, complex(s), fact, scale)


def apply_operator(op: ShiftInvertOperator, v, counter: FlopCounter | None = None):
    """``(r_u, r_l) = (A - sB)^{-1} B (v_u, v_l)``."""
    vu, vl = v
    n = op.N
    if len(vu) != n or len(vl) != n:
        raise ValueError(f"block vectors must have length {n}")
    P = op.pencil
    s = op.s
    rhs = s * spmv(P.M, vu, counter) + spmv(P.C, vu, counter) + spmv(P.M, vl, counter)
    ru = -op.factorization.solve(rhs, counter)
    rl = s * ru + vu
    return ru, rl


def b_inner(x, y, M: sp.spmatrix, counter: FlopCounter | None = None) -> complex:
    """``x_u^H y_u + x_l^H M y_l``."""
    return dot(x[0], y[0], counter) + dot(x[1], spmv(M, y[1], counter), counter)


def b_norm(x, M: sp.spmatrix, counter: FlopCounter | None = None) -> float:
    return float(np.sqrt(max(b_inner(x, x, M, counter).real, 0.0)))
