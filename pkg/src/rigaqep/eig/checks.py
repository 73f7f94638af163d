"""Post-solve checks of the Krylov decomposition (not charged to the FLOP counter)."""
from __future__ import annotations

import numpy as np

from .arnoldi import KrylovState, decomposition_residual
from .lanczos import LanczosState, lanczos_residual
from .quadratic import EigenResult

GRAM_CHUNK = 32


def _gram_deviation(k: int, block) -> float:
    """``max |G - I|`` where ``block(a, b)`` returns columns ``a:b`` of the ``k x k`` Gram matrix."""
    worst = 0.0
    for a in range(0, k, GRAM_CHUNK):
        b = min(k, a + GRAM_CHUNK)
        G = block(a, b)
        G[np.arange(a, b), np.arange(b - a)] -= 1.0
        worst = max(worst, float(np.max(np.abs(G))))
    return worst


def krylov_invariants(res: EigenResult, sample: int | None = None, seed: int = 0) -> dict:
    """Decomposition residual and B-orthonormality deviation of a finished solve.

    ``sample`` limits the residual check to that many random columns (each
    costs one operator application); the Gram matrix is always complete but
    is formed in column blocks, and ``B V`` is recomputed rather than read
    back from the recurrence.
    """
    st = res.state
    n = st.n
    cols = None
    if sample is not None and sample < n:
        cols = np.sort(np.random.default_rng(seed).choice(n, sample, replace=False))
    k = n + (0 if st.breakdown else 1)
    if isinstance(st, LanczosState):
        B, V = res.op.B, st.V
        ident = lanczos_residual(res, cols)
        orth = _gram_deviation(k, lambda a, b: V[:k].conj() @ (B @ V[a:b].T))
    elif isinstance(st, KrylovState):
        M, Vu, Vl = res.M, st.Vu, st.Vl
        ident = decomposition_residual(st, res.op, M, cols)
        orth = _gram_deviation(k, lambda a, b: Vu[:k].conj() @ Vu[a:b].T + Vl[:k].conj() @ (M @ Vl[a:b].T))
    else:
        raise TypeError(f"unknown Krylov state {type(st).__name__}")
    return {"identity_residual": ident, "b_orthogonality": orth,
            "columns": n if cols is None else len(cols)}
