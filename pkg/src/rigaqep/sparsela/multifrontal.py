"""Multifrontal LU factorization over a separator tree.

Each tree node owns a contiguous range of pivots in the permuted matrix.
Its dense frontal matrix collects the original entries of those pivot
rows/columns plus the Schur-complement updates of its children; the pivot
block is factorized with partial pivoting restricted to the node's own rows,
and the remaining Schur complement is passed to the parent.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .counters import FlopCounter
from .ordering import Ordering, TreeNode

PIVOT_FLOOR = 1e-300
# pivot blocks up to this size are solved in stacks of equal shape
BATCH_MAX_PIVOTS = 64


class SingularMatrixError(ArithmeticError):
    """A pivot block has no usable pivot."""


class DimensionError(ValueError):
    pass


@dataclass(eq=False)
class Symbolic:
    nodes: list[TreeNode]
    structs: list[np.ndarray]
    n: int

    @property
    def front_sizes(self) -> np.ndarray:
        return np.array([nd.size + len(s) for nd, s in zip(self.nodes, self.structs)])

    @cached_property
    def nnz_L(self) -> int:
        """Lower factor entries including the (unit) diagonal."""
        return int(sum(k * (k + 1) // 2 + k * len(s) for k, s in
                       ((nd.size, s) for nd, s in zip(self.nodes, self.structs))))

    @property
    def nnz_U(self) -> int:
        return self.nnz_L

    @cached_property
    def fa_madds(self) -> int:
        return int(sum(front_madds(nd.size, nd.size + len(s)) for nd, s in zip(self.nodes, self.structs)))


def front_madds(k: int, f: int) -> int:
    """Multiply-adds (divisions included) of eliminating ``k`` pivots in a front of size ``f``."""
    r = np.arange(f - 1, f - 1 - k, -1, dtype=np.int64)
    return int(np.sum(r * r + r))


def _permuted_pattern(A: sp.spmatrix, perm: np.ndarray) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    P = A[perm][:, perm]
    P = (P + P.T).tocsr() if not _structurally_symmetric(P) else P
    P.sort_indices()
    return P


def _structurally_symmetric(A: sp.csr_matrix) -> bool:
    B = sp.csr_matrix((np.ones(A.nnz, dtype=np.int8), A.indices, A.indptr), shape=A.shape)
    return (B != B.T).nnz == 0


def symbolic_analysis(A: sp.spmatrix, ordering: Ordering) -> Symbolic:
    """Row structures of every front for the given ordering.

    With a separator tree in ``ordering.nodes`` the tree is used as is;
    otherwise the elimination tree of the permuted pattern is computed and
    chains of columns with nested structure are merged into supernodes.
    """
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionError(f"matrix must be square, got {A.shape}")
    if ordering.n != n:
        raise DimensionError(f"ordering has length {ordering.n}, matrix has {n} rows")
    B = _permuted_pattern(A, ordering.perm)
    if ordering.nodes is not None:
        return _symbolic_tree(B, ordering.nodes)
    return _symbolic_etree(B)


def _symbolic_tree(B: sp.csr_matrix, nodes: list[TreeNode]) -> Symbolic:
    structs = []
    for t, nd in enumerate(nodes):
        a, b = nd.start, nd.stop
        parts = [B.indices[B.indptr[a]:B.indptr[b]]]
        parts.extend(structs[c] for c in nd.children)
        s = np.unique(np.concatenate(parts))
        structs.append(s[s >= b])
    _check_tree(nodes, structs)
    return Symbolic(nodes, structs, B.shape[0])


def _check_tree(nodes, structs):
    for t, nd in enumerate(nodes):
        if nd.parent < 0:
            if len(structs[t]):
                raise ValueError("root front has a nonempty update structure")
            continue
        par = nodes[nd.parent]
        s = structs[t]
        inside = (s >= par.start) & (s < par.stop)
        if not np.all(np.isin(s[~inside], structs[nd.parent])):
            raise ValueError("separator tree is inconsistent with the matrix pattern")


def _symbolic_etree(B: sp.csr_matrix) -> Symbolic:
    n = B.shape[0]
    parent = np.full(n, -1, dtype=np.int64)
    kids: list[list[int]] = [[] for _ in range(n)]
    col_struct: list[np.ndarray] = [None] * n
    for j in range(n):
        parts = [B.indices[B.indptr[j]:B.indptr[j + 1]]]
        for c in kids[j]:
            parts.append(col_struct[c])
            col_struct[c] = None
        s = np.unique(np.concatenate(parts))
        s = s[s > j]
        col_struct[j] = s
        if len(s):
            parent[j] = s[0]
            kids[s[0]].append(j)
    return _amalgamate(B, parent, kids)


def _amalgamate(B, parent, kids) -> Symbolic:
    """Fundamental supernodes: chains j -> j+1 where j is the only child."""
    n = B.shape[0]
    starts = [0]
    for j in range(n - 1):
        if not (parent[j] == j + 1 and len(kids[j + 1]) == 1):
            starts.append(j + 1)
    starts.append(n)
    col_node = np.empty(n, dtype=np.int64)
    nodes = []
    for t in range(len(starts) - 1):
        nodes.append(TreeNode(starts[t], starts[t + 1]))
        col_node[starts[t]:starts[t + 1]] = t
    for t, nd in enumerate(nodes):
        p = parent[nd.stop - 1]
        if p >= 0:
            nd.parent = int(col_node[p])
            nodes[nd.parent].children.append(t)
    return _symbolic_tree(B, nodes)


@dataclass
class Factorization:
    """Multifrontal LU factors of ``A[perm][:, perm]``."""

    ordering: Ordering
    symbolic: Symbolic
    dtype: np.dtype
    lu: list = field(default_factory=list)
    rowperm: list = field(default_factory=list)
    L21: list = field(default_factory=list)
    U12: list = field(default_factory=list)
    madds: int = 0

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def nnz_L(self) -> int:
        return self.symbolic.nnz_L

    @property
    def nnz_U(self) -> int:
        return self.symbolic.nnz_U

    @property
    def perm(self) -> np.ndarray:
        return self.ordering.perm

    def solve(self, rhs, counter: FlopCounter | None = None) -> np.ndarray:
        """Forward elimination and back substitution for one or more right-hand sides."""
        b = np.asarray(rhs)
        if b.shape[0] != self.n:
            raise DimensionError(f"rhs has {b.shape[0]} rows, factorization has {self.n}")
        if np.iscomplexobj(b) and not np.issubdtype(self.dtype, np.complexfloating):
            # real factors: solve real and imaginary parts together
            two = np.concatenate([b.real.reshape(self.n, -1), b.imag.reshape(self.n, -1)], axis=1)
            x = self._solve(two)
            k = two.shape[1] // 2
            out = x[:, :k] + 1j * x[:, k:]
            ncols = k
            out = out.reshape(b.shape)
        else:
            out = self._solve(b.reshape(self.n, -1).astype(np.result_type(b.dtype, self.dtype)))
            ncols = out.shape[1]
            out = out.reshape(b.shape)
        if counter is not None:
            counter.add("fb", (self.nnz_L + self.nnz_U) * ncols, calls=ncols)
        return out

    @cached_property
    def _plan(self) -> list:
        """Solve schedule, deepest tree level first.

        Nodes on one level are independent, so small pivot blocks of equal
        shape are stacked and substituted together; the rest go one by one.
        """
        sym = self.symbolic
        nodes = sym.nodes
        depth = np.zeros(len(nodes), dtype=np.int64)
        for t in range(len(nodes) - 1, -1, -1):
            if nodes[t].parent >= 0:
                depth[t] = depth[nodes[t].parent] + 1
        groups: dict[tuple, list[int]] = {}
        for t, nd in enumerate(nodes):
            k = nd.size
            key = (int(depth[t]), k, len(sym.structs[t])) if k <= BATCH_MAX_PIVOTS else (int(depth[t]), -1, t)
            groups.setdefault(key, []).append(t)
        plan = []
        for key in sorted(groups, key=lambda q: -q[0]):
            ts = groups[key]
            # stacking pays off when the group outnumbers the row sweeps it costs
            if key[1] < 0 or len(ts) < max(2, key[1] // 3):
                plan += [("node", t) for t in ts]
                continue
            k, m = key[1], key[2]
            a = np.array([nodes[t].start for t in ts])
            P = a[:, None] + np.arange(k)
            R = a[:, None] + np.array([self.rowperm[t] for t in ts])
            LU = np.stack([self.lu[t] for t in ts])
            S = np.stack([sym.structs[t] for t in ts]) if m else None
            L21 = np.stack([self.L21[t] for t in ts]) if m else None
            U12 = np.stack([self.U12[t] for t in ts]) if m else None
            # share storage with the per-node views
            for g, t in enumerate(ts):
                self.lu[t] = LU[g]
                if m:
                    self.L21[t], self.U12[t] = L21[g], U12[g]
            plan.append(("batch", (P, R, S, LU, L21, U12)))
        return plan

    def _solve(self, b: np.ndarray) -> np.ndarray:
        perm = self.ordering.perm
        y = b[perm]
        trtrs = sla.get_lapack_funcs("trtrs", (self.lu[0] if self.lu else y, y))
        sym = self.symbolic
        plan = self._plan
        for kind, item in plan:
            if kind == "node":
                t = item
                a, c = sym.nodes[t].start, sym.nodes[t].stop
                ya, info = trtrs(self.lu[t], y[a:c][self.rowperm[t]], lower=1, unitdiag=1)
                y[a:c] = ya
                s = sym.structs[t]
                if len(s):
                    y[s] -= self.L21[t] @ ya
            else:
                P, R, S, LU, L21, _ = item
                Z = y[R]
                for i in range(1, LU.shape[1]):
                    Z[:, i] -= np.einsum("gj,gjr->gr", LU[:, i, :i], Z[:, :i])
                y[P] = Z
                if S is not None:
                    np.subtract.at(y, S, np.einsum("gmk,gkr->gmr", L21, Z))
        for kind, item in reversed(plan):
            if kind == "node":
                t = item
                a, c = sym.nodes[t].start, sym.nodes[t].stop
                s = sym.structs[t]
                r = y[a:c]
                if len(s):
                    r = r - self.U12[t] @ y[s]
                y[a:c], info = trtrs(self.lu[t], r, lower=0)
            else:
                P, _, S, LU, _, U12 = item
                Z = y[P]
                if S is not None:
                    Z -= np.einsum("gkm,gmr->gkr", U12, y[S])
                for i in range(LU.shape[1] - 1, -1, -1):
                    Z[:, i] -= np.einsum("gj,gjr->gr", LU[:, i, i + 1:], Z[:, i + 1:])
                    Z[:, i] /= LU[:, i, i, None]
                y[P] = Z
        x = np.empty_like(y)
        x[perm] = y
        return x

    def to_sparse(self):
        """Global ``(row_perm, col_perm, L, U)`` with ``A[row_perm][:, col_perm] = L @ U``."""
        n = self.n
        sym = self.symbolic
        rowp = self.ordering.perm.copy()
        Lr, Lc, Lv, Ur, Uc, Uv = [], [], [], [], [], []
        for t, nd in enumerate(sym.nodes):
            a, c = nd.start, nd.stop
            k = c - a
            rowp[a:c] = self.ordering.perm[a:c][self.rowperm[t]]
            lu = self.lu[t]
            il, jl = np.tril_indices(k, -1)
            Lr.append(a + il); Lc.append(a + jl); Lv.append(lu[il, jl])
            Lr.append(a + np.arange(k)); Lc.append(a + np.arange(k)); Lv.append(np.ones(k))
            iu, ju = np.triu_indices(k)
            Ur.append(a + iu); Uc.append(a + ju); Uv.append(lu[iu, ju])
            s = sym.structs[t]
            if len(s):
                rr, cc = np.meshgrid(s, np.arange(a, c), indexing="ij")
                Lr.append(rr.ravel()); Lc.append(cc.ravel()); Lv.append(self.L21[t].ravel())
                rr, cc = np.meshgrid(np.arange(a, c), s, indexing="ij")
                Ur.append(rr.ravel()); Uc.append(cc.ravel()); Uv.append(self.U12[t].ravel())
        L = sp.csr_matrix((np.concatenate(Lv), (np.concatenate(Lr), np.concatenate(Lc))), shape=(n, n))
        U = sp.csr_matrix((np.concatenate(Uv), (np.concatenate(Ur), np.concatenate(Uc))), shape=(n, n))
        return rowp, self.ordering.perm.copy(), L, U


def _same_csr(A: sp.csr_matrix, B: sp.csr_matrix) -> bool:
    return (np.array_equal(A.indptr, B.indptr) and np.array_equal(A.indices, B.indices)
            and np.array_equal(A.data, B.data))


def _swaps_to_perm(piv: np.ndarray) -> np.ndarray:
    p = np.arange(len(piv))
    for i, j in enumerate(piv):
        if i != j:
            p[i], p[j] = p[j], p[i]
    return p


def lu_factorize(A: sp.spmatrix, ordering: Ordering, counter: FlopCounter | None = None,
                 symbolic: Symbolic | None = None) -> Factorization:
    """Numeric multifrontal LU of ``A`` in the given elimination order."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if symbolic is None:
        symbolic = symbolic_analysis(A, ordering)
    dtype = np.result_type(A.dtype, np.float64)
    perm = ordering.perm
    B = A[perm][:, perm].tocsr()
    del A
    B.sort_indices()
    BT = B.T.tocsr()
    BT.sort_indices()
    if _same_csr(B, BT):
        BT = B      # symmetric: pivot columns are the pivot rows
    fact = Factorization(ordering, symbolic, dtype)
    loc = np.full(n, -1, dtype=np.int64)
    pending: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    madds = 0
    for t, nd in enumerate(symbolic.nodes):
        a, c = nd.start, nd.stop
        k = c - a
        s = symbolic.structs[t]
        idx = np.concatenate([np.arange(a, c), s])
        f = len(idx)
        loc[idx] = np.arange(f)
        F = np.zeros((f, f), dtype=dtype)
        # pivot rows
        lo, hi = B.indptr[a], B.indptr[c]
        cols = B.indices[lo:hi]
        rows = np.repeat(np.arange(k), np.diff(B.indptr[a:c + 1]))
        keep = cols >= a
        F[rows[keep], loc[cols[keep]]] = B.data[lo:hi][keep]
        # pivot columns below the pivot block
        lo, hi = BT.indptr[a], BT.indptr[c]
        rws = BT.indices[lo:hi]
        cc = np.repeat(np.arange(k), np.diff(BT.indptr[a:c + 1]))
        keep = rws >= c
        F[loc[rws[keep]], cc[keep]] = BT.data[lo:hi][keep]
        for ch in nd.children:
            cs, upd = pending.pop(ch)
            li = loc[cs]
            F[np.ix_(li, li)] += upd
        loc[idx] = -1

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(F[:k, :k], overwrite_a=True, check_finite=False)
        d = np.abs(np.diag(lu))
        if not np.all(np.isfinite(d)) or d.min() < PIVOT_FLOOR:
            raise SingularMatrixError(f"singular pivot block at front {t} (size {k})")
        rp = _swaps_to_perm(piv)
        fact.lu.append(lu)
        fact.rowperm.append(rp)
        if len(s):
            U12 = sla.solve_triangular(lu, F[:k, k:][rp], lower=True, unit_diagonal=True,
                                       check_finite=False)
            L21 = sla.solve_triangular(lu, F[k:, :k].T, lower=False, trans="T",
                                       check_finite=False).T
            pending[t] = (s, F[k:, k:] - L21 @ U12)
            fact.U12.append(U12)
            fact.L21.append(np.ascontiguousarray(L21))
        else:
            fact.U12.append(None)
            fact.L21.append(None)
        madds += front_madds(k, f)
    fact.madds = madds
    if counter is not None:
        counter.add("fa", madds)
    return fact
