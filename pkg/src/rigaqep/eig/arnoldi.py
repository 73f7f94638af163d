"""B-orthogonal Arnoldi recurrence, Ritz extraction and Krylov-Schur restarting.

The basis is stored as two row-major arrays ``Vu``/``Vl`` (one row per
basis vector). After ``n`` completed steps the decomposition reads
``S V_n = V_{n+1} H`` with ``H`` of shape ``(n+1, n)``; right after a
restart its leading block is triangular and the last row is full.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ..sparsela import FlopCounter, spmv
from .operator import ShiftInvertOperator, apply_operator

DGKS_ETA = 1.0 / np.sqrt(2.0)
BREAKDOWN_TOL = 1e-14


class NumericalFailure(ArithmeticError):
    pass


@dataclass
class KrylovState:
    Vu: np.ndarray                 # (capacity, N)
    Vl: np.ndarray
    H: np.ndarray                  # (capacity, capacity - 1)
    n: int = 0                     # completed steps; basis has n + 1 vectors
    nit: int = 0
    breakdown: bool = False
    reorth_steps: int = 0
    steps: int = 0

    @property
    def beta(self) -> float:
        return float(abs(self.H[self.n, self.n - 1])) if self.n else 0.0

    @property
    def Hm(self) -> np.ndarray:
        return self.H[: self.n, : self.n]

    @property
    def capacity(self) -> int:
        return self.Vu.shape[0]


def _charge(counter, cat, n, calls):
    if counter is not None and calls:
        counter.add(cat, n * calls, calls=calls)


def new_state(op: ShiftInvertOperator, v1, M: sp.spmatrix, capacity: int,
              counter: FlopCounter | None = None) -> KrylovState:
    N = op.N
    dtype = op.dtype
    vu, vl = (np.asarray(v1[0]), np.asarray(v1[1]))
    if dtype == np.float64 and (np.iscomplexobj(vu) or np.iscomplexobj(vl)):
        dtype = np.complex128
    Vu = np.zeros((capacity, N), dtype=dtype)
    Vl = np.zeros((capacity, N), dtype=dtype)
    H = np.zeros((capacity, capacity - 1), dtype=dtype)
    Mv = spmv(M, vl, counter)
    nrm = np.sqrt(abs(np.vdot(vu, vu) + np.vdot(vl, Mv)))
    _charge(counter, "vv", N, 2)
    if nrm == 0:
        raise ValueError("start vector is zero")
    Vu[0], Vl[0] = vu / nrm, vl / nrm
    return KrylovState(Vu, Vl, H)


def arnoldi_run(op: ShiftInvertOperator, M: sp.spmatrix, m: int, v1=None,
                counter: FlopCounter | None = None, state: KrylovState | None = None) -> KrylovState:
    """Run ``m`` Arnoldi steps, starting from ``v1`` or extending ``state``.

    Classical Gram-Schmidt in the B-inner product with a second (DGKS) pass
    whenever the first one cancels more than ``1 - 1/sqrt(2)`` of the norm.
    """
    if m < 1:
        raise ValueError("need m >= 1")
    if state is None:
        if v1 is None:
            raise ValueError("need a start vector or a state to extend")
        state = new_state(op, v1, M, m + 1, counter)
    if state.n + m + 1 > state.capacity:
        _grow(state, state.n + m + 1)
    N = op.N
    Vu, Vl, H = state.Vu, state.Vl, state.H
    for _ in range(m):
        j = state.n
        ru, rl = apply_operator(op, (Vu[j], Vl[j]), counter)
        if ru.dtype != Vu.dtype:
            ru, rl = ru.astype(Vu.dtype), rl.astype(Vu.dtype)
        Mr = spmv(M, rl, counter)
        rnorm = np.sqrt(abs(np.vdot(ru, ru) + np.vdot(rl, Mr)))
        h = Vu[: j + 1].conj() @ ru + Vl[: j + 1].conj() @ Mr
        zu = ru - Vu[: j + 1].T @ h
        zl = rl - Vl[: j + 1].T @ h
        Mz = spmv(M, zl, counter)
        hz = np.sqrt(abs(np.vdot(zu, zu) + np.vdot(zl, Mz)))
        _charge(counter, "vv", N, 4 * (j + 1) + 4)
        if hz < DGKS_ETA * rnorm:
            c = Vu[: j + 1].conj() @ zu + Vl[: j + 1].conj() @ Mz
            zu -= Vu[: j + 1].T @ c
            zl -= Vl[: j + 1].T @ c
            h += c
            Mz = spmv(M, zl, counter)
            hz = np.sqrt(abs(np.vdot(zu, zu) + np.vdot(zl, Mz)))
            _charge(counter, "vv", N, 4 * (j + 1) + 2)
            state.reorth_steps += 1
        H[: j + 1, j] = h
        H[j + 1, j] = hz
        state.n += 1
        state.steps += 1
        if hz <= BREAKDOWN_TOL * rnorm:
            # invariant subspace: the Ritz pairs of H are exact
            H[j + 1, j] = 0.0
            state.breakdown = True
            break
        Vu[j + 1] = zu / hz
        Vl[j + 1] = zl / hz
    return state


def _grow(state: KrylovState, capacity: int):
    N = state.Vu.shape[1]
    dt = state.Vu.dtype
    Vu = np.zeros((capacity, N), dtype=dt)
    Vl = np.zeros((capacity, N), dtype=dt)
    H = np.zeros((capacity, capacity - 1), dtype=dt)
    k = state.n + 1
    Vu[:k], Vl[:k] = state.Vu[:k], state.Vl[:k]
    H[:k, : state.n] = state.H[:k, : state.n]
    state.Vu, state.Vl, state.H = Vu, Vl, H


@dataclass
class RitzPair:
    theta: complex
    lam: complex
    y: np.ndarray = field(repr=False)
    estimate: float


def ritz_extract(state: KrylovState, op: ShiftInvertOperator) -> list[RitzPair]:
    """Ritz pairs of the projected matrix, nearest the shift (largest ``|theta|``) first.

    ``lam = scale * (s + 1/theta)`` is in the units of the unscaled pencil.
    """
    n = state.n
    if n < 1:
        raise ValueError("no completed Arnoldi steps")
    try:
        theta, Y = sla.eig(state.Hm, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"Hessenberg eigenvalue iteration failed: {exc}") from exc
    last = state.H[n, :n]
    out = []
    for t, y in zip(theta, Y.T):
        y = y / np.linalg.norm(y)
        est = float(abs(last @ y))
        lam = complex(np.inf) if t == 0 else op.scale * (complex(op.shift) + 1.0 / t)
        out.append(RitzPair(complex(t), lam, y, est))
    out.sort(key=lambda r: -abs(r.theta))
    return out


def krylov_schur_restart(state: KrylovState, keep: int) -> int:
    """Compress the decomposition onto the ``keep`` Ritz values of largest ``|theta|``.

    Returns the number of retained vectors, which may exceed ``keep`` by one
    so that conjugate pairs stay together in real arithmetic.
    """
    n = state.n
    if keep >= n:
        return n
    if keep < 1:
        raise ValueError("keep must be >= 1")
    Hm = state.Hm
    real = not np.iscomplexobj(Hm)
    mags = np.sort(np.abs(np.linalg.eigvals(Hm)))[::-1]
    thr = mags[keep - 1] * (1 - 1e-10)
    if real:
        T, Z, sdim = sla.schur(Hm, output="real", sort=lambda re, im: np.hypot(re, im) >= thr)
    else:
        T, Z, sdim = sla.schur(Hm, output="complex", sort=lambda x: abs(x) >= thr)
    if not 1 <= sdim < n:
        raise NumericalFailure(f"Schur reordering selected {sdim} of {n} values")
    k = sdim
    Zk = Z[:, :k]
    b = state.H[n, :n] @ Zk
    vu_next, vl_next = state.Vu[n].copy(), state.Vl[n].copy()
    state.Vu[:k] = Zk.T @ state.Vu[:n]
    state.Vl[:k] = Zk.T @ state.Vl[:n]
    state.Vu[k], state.Vl[k] = vu_next, vl_next
    state.Vu[k + 1:] = 0
    state.Vl[k + 1:] = 0
    state.H[:] = 0
    state.H[:k, :k] = T[:k, :k]
    state.H[k, :k] = b
    state.n = k
    return k


def explicit_restart(state: KrylovState, v, M: sp.spmatrix, locked: int = 0) -> None:
    """Replace everything past the first ``locked`` vectors by the B-orthogonalized ``v``."""
    Vu, Vl = state.Vu, state.Vl
    vu, vl = v
    for _ in range(2):
        Mv = M @ vl
        c = Vu[:locked].conj() @ vu + Vl[:locked].conj() @ Mv
        vu = vu - Vu[:locked].T @ c
        vl = vl - Vl[:locked].T @ c
    nrm = np.sqrt(abs(np.vdot(vu, vu) + np.vdot(vl, M @ vl)))
    Vu[locked], Vl[locked] = vu / nrm, vl / nrm
    Vu[locked + 1:] = 0
    Vl[locked + 1:] = 0
    state.H[:, :] = 0
    state.n = locked
    state.breakdown = False


def decomposition_residual(state: KrylovState, op: ShiftInvertOperator, M: sp.spmatrix,
                           columns=None) -> float:
    """``max_j ||S v_j - V_{n+1} h_j||_B / ||H||_2`` over the given (default: all) columns."""
    n = state.n
    cols = range(n) if columns is None else columns
    Hfull = state.H[: n + 1, :n]
    worst = 0.0
    for j in cols:
        ru, rl = apply_operator(op, (state.Vu[j], state.Vl[j]))
        ru = ru - state.Vu[: n + 1].T @ Hfull[:, j]
        rl = rl - state.Vl[: n + 1].T @ Hfull[:, j]
        worst = max(worst, float(np.sqrt(abs(np.vdot(ru, ru) + np.vdot(rl, M @ rl)))))
    hn = np.linalg.norm(Hfull, 2) if n else 1.0
    return worst / hn


def b_orthogonality(state: KrylovState, M: sp.spmatrix) -> float:
    """``||V^H B V - I||_max`` over the current basis."""
    k = state.n + (0 if state.breakdown else 1)
    Vu, Vl = state.Vu[:k], state.Vl[:k]
    MV = (M @ Vl.T).T
    G = Vu.conj() @ Vu.T + Vl.conj() @ MV.T
    return float(np.max(np.abs(G - np.eye(k))))
