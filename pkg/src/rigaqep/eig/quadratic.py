"""Shift-and-invert Krylov-Schur solver for quadratic pencils."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..assembly import QuadraticPencil
from ..sparsela import FlopCounter, Ordering
from .arnoldi import (KrylovState, NumericalFailure, arnoldi_run, explicit_restart,
                      krylov_schur_restart, new_state, ritz_extract)
from .operator import ShiftInvertOperator, build_operator, scale_pencil

CHECK_CHUNK = 16


class ConvergenceError(RuntimeError):
    """Raised after the restart budget is spent; ``pairs`` holds what did converge."""

    def __init__(self, msg, pairs):
        super().__init__(msg)
        self.pairs = pairs


@dataclass
class EigenPair:
    lam: complex
    u: np.ndarray = field(repr=False)
    residual: float
    estimate: float = np.nan

    def to_dict(self) -> dict:
        return {"re": float(np.real(self.lam)), "im": float(np.imag(self.lam)),
                "residual": float(self.residual)}


class EigenResult(list):
    """List of converged :class:`EigenPair` plus solver bookkeeping."""

    def __init__(self, pairs, *, nit, m, keep, shift, scale, counter, state, op, M):
        super().__init__(pairs)
        self.nit = nit
        self.m = m
        self.keep = keep
        self.shift = shift
        self.scale = scale
        self.counter = counter
        self.state: KrylovState = state
        self.op: ShiftInvertOperator = op
        self.M = M

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([p.lam for p in self], dtype=complex)


def default_subspace(nev: int) -> int:
    return max(2 * nev, nev + 20)


def default_keep(nev: int, m: int) -> int:
    return nev + min(20, m - nev - 1)


def _one_norms(K, C, M):
    return tuple(float(spla.norm(A, 1)) if A.nnz else 0.0 for A in (K, C, M))


def pencil_residual(K, C, M, lam: complex, u: np.ndarray, norms=None) -> float:
    """``||Q(lam) u|| / ((||K||_1 + |lam| ||C||_1 + |lam|^2 ||M||_1) ||u||)``."""
    nK, nC, nM = norms if norms is not None else _one_norms(K, C, M)
    r = K @ u + lam * (C @ u) + lam * lam * (M @ u)
    den = (nK + abs(lam) * nC + abs(lam) ** 2 * nM) * np.linalg.norm(u)
    return float(np.linalg.norm(r) / den) if den > 0 else float(np.linalg.norm(r))


def extract_vector(xu: np.ndarray, xl: np.ndarray, gamma: complex) -> np.ndarray:
    """Pick the better-conditioned block of a linearized eigenvector (``x_l = gamma x_u``)."""
    if np.linalg.norm(xl) > np.linalg.norm(xu) and gamma != 0:
        u = xl / gamma
    else:
        u = xu
    return u / np.linalg.norm(u)


def solve_quadratic(pencil: QuadraticPencil, s: complex, nev: int, m: int | None = None,
                    tol: float = 1e-8, counter: FlopCounter | None = None,
                    ordering: Ordering | None = None, max_restarts: int = 100,
                    seed: int = 0, scale: bool = True, v1=None) -> EigenResult:
    """``nev`` eigenpairs of ``K + lam C + lam^2 M`` nearest the shift ``s``.

    Each outer iteration performs ``m`` Arnoldi steps; between iterations the
    decomposition is compressed to ``keep`` Schur vectors (Krylov-Schur).
    """
    N = pencil.N
    if nev < 1 or nev > 2 * N:
        raise ValueError(f"nev={nev} outside [1, {2 * N}]")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    m = default_subspace(nev) if m is None else int(m)
    m = min(m, 2 * N)
    if m <= nev and m < 2 * N:
        raise ValueError(f"subspace size m={m} must exceed nev={nev}")
    keep = max(1, min(default_keep(nev, m), m - 1)) if m > nev else nev
    counter = counter if counter is not None else FlopCounter()

    work, sigma = scale_pencil(pencil) if scale else (pencil, 1.0)
    op = build_operator(work, complex(s) / sigma, ordering, counter, scale=sigma)
    M = work.M
    norms = _one_norms(pencil.K, pencil.C, pencil.M)

    rng = np.random.default_rng(seed)
    if v1 is None:
        if op.real:
            v1 = (rng.standard_normal(N), rng.standard_normal(N))
        else:
            v1 = (rng.standard_normal(N) + 1j * rng.standard_normal(N),
                  rng.standard_normal(N) + 1j * rng.standard_normal(N))
    state = new_state(op, v1, M, capacity=keep + m + 2, counter=counter)

    nit = 0
    converged: list[EigenPair] = []
    while True:
        nit += 1
        state.nit = nit
        arnoldi_run(op, M, m, counter=counter, state=state)
        ritz = ritz_extract(state, op)
        converged = None    # drop last cycle's vectors before forming new ones
        converged = _check(state, ritz, nev, op, pencil, norms, tol)
        if len(converged) >= min(nev, len(ritz)) or state.breakdown:
            break
        if nit > max_restarts:
            raise ConvergenceError(
                f"{len(converged)} of {nev} pairs converged after {nit} iterations", converged)
        try:
            krylov_schur_restart(state, keep)
        except (NumericalFailure, np.linalg.LinAlgError):
            _fallback_restart(state, ritz, converged, M, rng, op)
    converged.sort(key=lambda p: abs(p.lam - complex(s)))
    return EigenResult(converged[:nev], nit=nit, m=m, keep=keep, shift=complex(s), scale=sigma,
                       counter=counter, state=state, op=op, M=M)


def _ritz_vector(state: KrylovState, y: np.ndarray):
    n = state.n
    return _combine(state.Vu[:n], y), _combine(state.Vl[:n], y)


def _combine(V: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``V.T @ Y`` without casting a real basis to complex."""
    if np.isrealobj(V) and np.iscomplexobj(Y):
        # contiguous parts keep the products on BLAS
        return V.T @ np.ascontiguousarray(Y.real) + 1j * (V.T @ np.ascontiguousarray(Y.imag))
    return V.T @ Y


def _check(state, ritz, nev, op, pencil, norms, tol) -> list[EigenPair]:
    cand = [r for r in ritz[:nev] if np.isfinite(r.lam)]
    if not cand:
        return []
    n = state.n
    Y = np.column_stack([r.y for r in cand])
    lam = np.array([r.lam for r in cand])
    nK, nC, nM = norms
    use_c = pencil.C.nnz and np.any(pencil.C.data)
    out = []
    # a few candidates at a time: one sparse mat-mat per matrix, bounded workspace
    for a in range(0, len(cand), CHECK_CHUNK):
        b = min(len(cand), a + CHECK_CHUNK)
        XU = _combine(state.Vu[:n], Y[:, a:b])
        XL = _combine(state.Vl[:n], Y[:, a:b])
        U = np.column_stack([extract_vector(XU[:, i - a], XL[:, i - a], cand[i].lam / op.scale)
                             for i in range(a, b)])
        lb = lam[a:b]
        R = pencil.K @ U + (lb ** 2) * (pencil.M @ U)
        if use_c:
            R = R + lb * (pencil.C @ U)
        al = np.abs(lb)
        den = (nK + al * nC + al ** 2 * nM) * np.linalg.norm(U, axis=0)
        res = np.linalg.norm(R, axis=0) / np.where(den > 0, den, 1.0)
        out += [EigenPair(cand[i].lam, U[:, i - a].copy(), float(res[i - a]),
                          cand[i].estimate / abs(cand[i].theta))
                for i in range(a, b) if res[i - a] <= tol]
    return out


def _fallback_restart(state, ritz, converged, M, rng, op):
    """Explicit restart from a random vector, deflating the converged Ritz vectors."""
    vecs = [_ritz_vector(state, r.y) for r in ritz[: len(converged)]]
    N = state.Vu.shape[1]
    dt = state.Vu.dtype
    # orthonormalize the locked Ritz vectors first
    state.n = 0
    k = 0
    for xu, xl in vecs:
        explicit_restart(state, (xu, xl), M, locked=k)
        k += 1
    v = rng.standard_normal(N).astype(dt), rng.standard_normal(N).astype(dt)
    explicit_restart(state, v, M, locked=k)
    if k:
        # the locked block is not an Arnoldi relation anymore; rebuild its projection
        from .operator import apply_operator
        for j in range(k):
            ru, rl = apply_operator(op, (state.Vu[j], state.Vl[j]))
            Mr = M @ rl
            state.H[: k + 1, j] = state.Vu[: k + 1].conj() @ ru + state.Vl[: k + 1].conj() @ Mr
        state.n = k


def write_eigenpairs(pairs, path, vectors_dir=None) -> Path:
    """JSON array of ``{re, im, residual}``; optionally eigenvectors as Matrix Market columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([p.to_dict() for p in pairs], indent=1))
    if vectors_dir is not None:
        import scipy.io
        vd = Path(vectors_dir)
        vd.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(pairs):
            scipy.io.mmwrite(str(vd / f"eigvec_{i:04d}.mtx"), np.asarray(p.u).reshape(-1, 1))
    return path


def read_eigenpairs(path) -> list[dict]:
    return json.loads(Path(path).read_text())
