"""Quadratic (linearized, shift-and-invert Krylov-Schur) and Hermitian (Lanczos) eigensolvers."""
from .arnoldi import (KrylovState, NumericalFailure, RitzPair, arnoldi_run, b_orthogonality,
                      decomposition_residual, krylov_schur_restart, new_state, ritz_extract)
from .checks import krylov_invariants
from .lanczos import lanczos_orthogonality, lanczos_residual, solve_generalized_hermitian
from .operator import (ShiftCollisionError, ShiftInvertOperator, apply_operator, b_inner, b_norm,
                       build_operator, default_ordering, scale_pencil)
from .quadratic import (ConvergenceError, EigenPair, EigenResult, pencil_residual, read_eigenpairs,
                        solve_quadratic, write_eigenpairs)

__all__ = [
    "krylov_invariants", "KrylovState", "NumericalFailure", "RitzPair", "arnoldi_run", "b_orthogonality",
    "decomposition_residual", "krylov_schur_restart", "new_state", "ritz_extract",
    "solve_generalized_hermitian", "lanczos_orthogonality", "lanczos_residual",
    "ShiftCollisionError", "ShiftInvertOperator", "apply_operator", "b_inner", "b_norm",
    "build_operator", "default_ordering", "scale_pencil", "ConvergenceError", "EigenPair",
    "EigenResult", "pencil_residual", "read_eigenpairs", "solve_quadratic", "write_eigenpairs",
]
