"""Thick-restart Lanczos for Hermitian-definite pencils ``A x = lam B x``.

The operator is ``S = (A - sB)^{-1} B``, self-adjoint in the B-inner product,
so the projected matrix is real symmetric: tridiagonal within a cycle and
arrowhead-plus-tridiagonal after a thick restart. New Lanczos vectors are
orthogonalized against the last two vectors only; their overlap with the
rest of the basis is measured every step and removed by a full
reorthogonalization only when it exceeds ``LOSS_TOL`` relative to the new
vector's norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..sparsela import FlopCounter, Ordering, SingularMatrixError, lu_factorize, spmv
from .operator import ShiftCollisionError
from .quadratic import ConvergenceError, EigenPair, EigenResult, default_keep, default_subspace

LOSS_TOL = 1e-12


@dataclass
class HermitianOperator:
    A: sp.csr_matrix
    B: sp.csr_matrix
    shift: float
    factorization: object
    scale: float = 1.0

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def apply(self, v, counter=None, Bv=None):
        if Bv is None:
            Bv = spmv(self.B, v, counter)
        return self.factorization.solve(Bv, counter)


@dataclass
class LanczosState:
    V: np.ndarray          # (capacity, N)
    BV: np.ndarray         # B @ V rows
    T: np.ndarray          # (capacity, capacity - 1) projected matrix
    n: int = 0
    kept: int = 0
    nit: int = 0
    breakdown: bool = False
    reorth_steps: int = 0

    @property
    def Hm(self):
        return self.T[: self.n, : self.n]

    @property
    def H(self):
        return self.T


def _hermitian_pattern_sum(A, B, s):
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    return (A - s * B).tocsr()


def solve_generalized_hermitian(A, B, s_real: float, nev: int, m: int | None = None,
                                tol: float = 1e-8, counter: FlopCounter | None = None,
                                ordering: Ordering | None = None, max_restarts: int = 100,
                                seed: int = 0) -> EigenResult:
    """``nev`` eigenpairs of ``A x = lam B x`` nearest the real shift ``s_real``."""
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    N = A.shape[0]
    if np.iscomplexobj(s_real) and np.imag(s_real) != 0:
        raise ValueError("the Hermitian path needs a real shift")
    s = float(np.real(s_real))
    if nev < 1 or nev > N:
        raise ValueError(f"nev={nev} outside [1, {N}]")
    m = default_subspace(nev) if m is None else int(m)
    m = min(m, N)
    if m <= nev and m < N:
        raise ValueError(f"subspace size m={m} must exceed nev={nev}")
    keep = max(1, min(default_keep(nev, m), m - 1)) if m > nev else nev
    counter = counter if counter is not None else FlopCounter()
    if ordering is None:
        from scipy.sparse.csgraph import reverse_cuthill_mckee
        ordering = Ordering(np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64), "rcm")
    try:
        fact = lu_factorize(_hermitian_pattern_sum(A, B, s), ordering, counter)
    except SingularMatrixError as exc:
        raise ShiftCollisionError(f"A - sB is singular at s={s}; perturb the shift") from exc
    op = HermitianOperator(A, B, s, fact)
    dtype = np.result_type(A.dtype, B.dtype, np.float64)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(N).astype(dtype)
    cap = keep + m + 2
    st = LanczosState(np.zeros((cap, N), dtype), np.zeros((cap, N), dtype), np.zeros((cap, cap - 1)))
    Bv = spmv(B, v, counter)
    nrm = np.sqrt(abs(np.vdot(v, Bv)))
    st.V[0], st.BV[0] = v / nrm, Bv / nrm

    nA = float(spla.norm(A, 1))
    nB = float(spla.norm(B, 1))
    nit = 0
    while True:
        nit += 1
        st.nit = nit
        lanczos_run(op, st, m, counter)
        theta, Y = sla.eigh(st.Hm)
        order = np.argsort(-np.abs(theta))
        theta, Y = theta[order], Y[:, order]
        beta = st.T[st.n, st.n - 1]
        conv = []
        for t, y in zip(theta[:nev], Y[:, :nev].T):
            if t == 0:
                continue
            lam = s + 1.0 / t
            u = st.V[: st.n].T @ y
            u = u / np.linalg.norm(u)
            r = A @ u - lam * (B @ u)
            res = float(np.linalg.norm(r) / ((nA + abs(lam) * nB) * np.linalg.norm(u)))
            if res <= tol:
                conv.append(EigenPair(complex(lam), u, res, float(abs(beta * y[-1]) / abs(t))))
        if len(conv) >= min(nev, len(theta)) or st.breakdown:
            break
        if nit > max_restarts:
            raise ConvergenceError(f"{len(conv)} of {nev} pairs converged after {nit} iterations", conv)
        thick_restart(st, theta, Y, keep)
    conv.sort(key=lambda p: abs(p.lam - s))
    return EigenResult(conv[:nev], nit=nit, m=m, keep=keep, shift=complex(s), scale=1.0,
                       counter=counter, state=st, op=op, M=B)


def lanczos_run(op: HermitianOperator, st: LanczosState, m: int, counter=None) -> LanczosState:
    """``m`` Lanczos steps continuing from ``st``."""
    V, BV, T = st.V, st.BV, st.T
    N = op.N
    k = st.kept
    for _ in range(m):
        j = st.n
        w = op.apply(V[j], counter, Bv=BV[j])
        if j == k:
            # first vector of a cycle: couples to every retained Ritz vector
            c = V[: j + 1].conj() @ spmv(op.B, w, counter)
            w = w - V[: j + 1].T @ c
            c2 = V[: j + 1].conj() @ spmv(op.B, w, counter)
            w = w - V[: j + 1].T @ c2
            c = (c + c2).real
            T[:j, j] = c[:j]
            T[j, :j] = c[:j]
            alpha = c[j]
        else:
            alpha = float(np.vdot(BV[j], w).real)
            w = w - alpha * V[j] - T[j, j - 1] * V[j - 1]
        T[j, j] = alpha
        Bw = spmv(op.B, w, counter)
        beta = np.sqrt(abs(np.vdot(w, Bw)))
        # measured loss of orthogonality against the whole basis (retained Ritz
        # vectors included); repaired only when it exceeds LOSS_TOL
        c = V[: j + 1].conj() @ Bw
        if counter is not None:
            counter.add("vv", (j + 4) * N, calls=j + 4)
        if j > k and np.max(np.abs(c)) > LOSS_TOL * beta:
            for _ in range(2):
                w = w - V[: j + 1].T @ c
                Bw = Bw - BV[: j + 1].T @ c
                c = V[: j + 1].conj() @ Bw
            beta = np.sqrt(abs(np.vdot(w, Bw)))
            st.reorth_steps += 1
            if counter is not None:
                counter.add("vv", 4 * (j + 1) * N, calls=4 * (j + 1))
        T[j + 1, j] = beta
        st.n += 1
        if beta <= 1e-14 * max(abs(alpha), 1.0):
            T[j + 1, j] = 0.0
            st.breakdown = True
            break
        if j + 1 < T.shape[1]:
            T[j, j + 1] = beta
        V[j + 1] = w / beta
        BV[j + 1] = Bw / beta
    return st


def thick_restart(st: LanczosState, theta, Y, keep: int) -> None:
    """Keep the ``keep`` Ritz vectors nearest the shift (already sorted first)."""
    n = st.n
    k = min(keep, n - 1)
    beta = st.T[n, n - 1]
    Yk = Y[:, :k]
    vnext, bvnext = st.V[n].copy(), st.BV[n].copy()
    st.V[:k] = Yk.T @ st.V[:n]
    st.BV[:k] = Yk.T @ st.BV[:n]
    st.V[k], st.BV[k] = vnext, bvnext
    st.V[k + 1:] = 0
    st.BV[k + 1:] = 0
    st.T[:] = 0
    st.T[np.arange(k), np.arange(k)] = theta[:k]
    b = beta * Y[n - 1, :k]
    st.T[k, :k] = b
    st.T[:k, k] = b
    st.n = k
    st.kept = k


def lanczos_residual(res: EigenResult, columns=None) -> float:
    """``max_j ||S v_j - V_{n+1} T e_j||_B / ||T||`` for a Hermitian solve."""
    st, op = res.state, res.op
    n = st.n
    T = st.T[: n + 1, :n]
    worst = 0.0
    for j in (range(n) if columns is None else columns):
        r = op.apply(st.V[j]) - st.V[: n + 1].T @ T[:, j]
        worst = max(worst, float(np.sqrt(abs(np.vdot(r, op.B @ r)))))
    return worst / np.linalg.norm(T, 2)


def lanczos_orthogonality(res: EigenResult) -> float:
    st = res.state
    k = st.n + (0 if st.breakdown else 1)
    G = st.V[:k].conj() @ st.BV[:k].T
    return float(np.max(np.abs(G - np.eye(k))))
