"""Galerkin assembly of the (K, C, M) pencils for both model problems.

On an axis-aligned box with piecewise-constant coefficients that vary only
along y, every block of the vector-valued matrices is a Kronecker product of
one-dimensional Gram matrices. Those are integrated element by element with
Gauss-Legendre rules and combined with ``scipy.sparse.kron``.

All three matrices are stored on one CSR pattern (the union of basis support
overlaps), explicit zeros included, so ``K + s C + s^2 M`` is an
elementwise operation on the value arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .spaces import VectorSpace, boundary_mask, component_scales, normal_component, tensor_free_sets
from .splines import UnivariateSpace, basis_matrix

__all__ = [
    "AssemblyError", "EmMaterial", "AcousticMaterial", "QuadraticPencil",
    "gauss_legendre", "assemble_em", "assemble_acoustic", "export_pencil",
]


class AssemblyError(ValueError):
    pass


def gauss_legendre(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [-1, 1]."""
    if not 1 <= npts <= 16:
        raise AssemblyError(f"npts={npts} outside [1, 16]")
    return np.polynomial.legendre.leggauss(npts)


@dataclass(frozen=True)
class EmMaterial:
    """Layered conductivity; ``layers`` holds ``(y0, y1, sigma_x, sigma_y)`` tuples."""

    layers: tuple[tuple[float, float, float, float], ...] = ()
    mu: float = 1.0
    eps: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(float(v) for v in L) for L in self.layers))
        for y0, y1, sx, sy in self.layers:
            if y1 <= y0:
                raise AssemblyError(f"empty layer [{y0}, {y1}]")
            if sx < 0 or sy < 0:
                raise AssemblyError("conductivities must be nonnegative")
        ys = sorted(self.layers)
        for a, b in zip(ys, ys[1:]):
            if not np.isclose(a[1], b[0]):
                raise AssemblyError("layers must tile the y-range without gaps or overlaps")
        if self.mu <= 0 or self.eps <= 0:
            raise AssemblyError("mu and eps must be positive")

    @property
    def conductive(self) -> bool:
        return any(sx > 0 or sy > 0 for _, _, sx, sy in self.layers)

    def sigma_at(self, y: np.ndarray, component: int) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for y0, y1, sx, sy in self.layers:
            sel = (y >= y0) & (y <= y1)
            out[sel] = sx if component == 0 else sy
        return out

    def check_aligned(self, space: VectorSpace):
        if not self.layers:
            return
        g = space.geometry
        lo = min(L[0] for L in self.layers)
        hi = max(L[1] for L in self.layers)
        if not (np.isclose(lo, g.y_range[0]) and np.isclose(hi, g.y_range[1])):
            raise AssemblyError("layers must cover the whole y-range of the box")
        for y0, y1, *_ in self.layers:
            for y in (y0, y1):
                e = (y - g.y_range[0]) / g.hy * space.ne
                if not np.isclose(e, round(e), atol=1e-9):
                    raise AssemblyError(f"layer interface y={y} is not on an element boundary")


@dataclass(frozen=True)
class AcousticMaterial:
    rho: float = 1.0
    c: float = 340.0
    alpha: float = 5e4
    beta: float = 200.0
    absorbing_edges: tuple[str, ...] = ("top",)

    def __post_init__(self):
        object.__setattr__(self, "absorbing_edges", tuple(self.absorbing_edges))
        for name in ("rho", "c", "alpha", "beta"):
            if getattr(self, name) <= 0:
                raise AssemblyError(f"{name} must be positive")
        for e in self.absorbing_edges:
            if e not in ("left", "right", "bottom", "top"):
                raise AssemblyError(f"unknown edge {e!r}")

    @property
    def rigid_edges(self) -> tuple[str, ...]:
        return tuple(e for e in ("left", "right", "bottom", "top") if e not in self.absorbing_edges)


@dataclass
class QuadraticPencil:
    """Sparse pencil ``K + lam C + lam^2 M`` on the free DOFs of ``space``.

    ``K``, ``C`` and ``M`` share ``indptr``/``indices``. ``full`` keeps the
    matrices over all DOFs (constraints not yet removed) when requested at
    assembly time.
    """

    K: sp.csr_matrix
    C: sp.csr_matrix
    M: sp.csr_matrix
    problem: str
    space: VectorSpace | None = None
    full: tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix] | None = None
    scale: float = 1.0
    flags: dict = field(default_factory=dict)
    full_stats: tuple[int, int] | None = None

    @classmethod
    def from_matrices(cls, K, C, M, problem: str = "generic") -> "QuadraticPencil":
        """Pencil from arbitrary (dense or sparse) matrices, stored on their union pattern."""
        mats = [sp.csr_matrix(np.atleast_2d(A) if not sp.issparse(A) else A) for A in (K, C, M)]
        n = mats[0].shape[0]
        if any(A.shape != (n, n) for A in mats):
            raise AssemblyError("K, C, M must be square and of equal size")
        P = sp.csr_matrix(sum(abs(A) for A in mats) + sp.eye(n, format="csr"))
        P.sort_indices()
        rows = np.repeat(np.arange(n), np.diff(P.indptr))
        out = []
        for A in mats:
            dt = complex if np.iscomplexobj(A.data) else float
            vals = np.asarray(A[rows, P.indices]).ravel().astype(dt)
            out.append(sp.csr_matrix((vals, P.indices, P.indptr), shape=(n, n)))
        return cls(*out, problem=problem)

    @property
    def N(self) -> int:
        return self.K.shape[0]

    @property
    def nnz(self) -> int:
        return self.K.nnz

    @property
    def full_nnz(self) -> int:
        """Union-pattern ``nnz`` over all DOFs, before constraints are removed."""
        return self.full_stats[1] if self.full_stats else self.nnz

    @property
    def full_N(self) -> int:
        return self.full_stats[0] if self.full_stats else self.N

    @property
    def real(self) -> bool:
        return not any(np.iscomplexobj(A.data) and np.any(A.data.imag) for A in (self.K, self.C, self.M))

    @property
    def has_damping(self) -> bool:
        return bool(np.any(self.C.data))

    def numeric_nnz(self) -> int:
        """Entries of the union pattern that are nonzero in at least one matrix."""
        nz = (self.K.data != 0) | (self.C.data != 0) | (self.M.data != 0)
        return int(np.count_nonzero(nz))

    def q(self, s: complex) -> sp.csr_matrix:
        """``Q(s) = K + s C + s^2 M`` on the shared pattern."""
        s = complex(s)
        if s.imag == 0 and self.real:
            s = s.real
            data = self.K.data + s * self.C.data.real + s * s * self.M.data
        else:
            data = self.K.data + s * self.C.data + s * s * self.M.data
        return sp.csr_matrix((data, self.K.indices, self.K.indptr), shape=self.K.shape)


# ---------------------------------------------------------------------------
# one-dimensional ingredients


def _quadrature(ne: int, npts: int):
    x, w = gauss_legendre(npts)
    left = np.arange(ne)[:, None] / ne
    pts = (left + (x[None, :] + 1) / (2 * ne)).ravel()
    wts = np.tile(w / (2 * ne), ne)
    return pts, wts


def gram_1d(sa: UnivariateSpace, da: int, sb: UnivariateSpace, db: int,
            weight=None, npts: int | None = None) -> np.ndarray:
    """Dense ``int_0^1 d^da(Ba_i) d^db(Bb_k) w(t) dt`` over parametric [0, 1]."""
    if npts is None:
        npts = max(sa.degree, sb.degree) + 1
    pts, wts = _quadrature(sa.ne, npts)
    if weight is not None:
        wts = wts * weight(pts)
    Ba = basis_matrix(sa, pts, da)[da]
    Bb = basis_matrix(sb, pts, db)[db]
    return Ba.T @ (wts[:, None] * Bb)


def overlap_1d(sa: UnivariateSpace, sb: UnivariateSpace) -> np.ndarray:
    """Boolean matrix of basis pairs whose open supports intersect."""
    a = sa.support_elements
    b = sb.support_elements
    return (a[:, None, 0] < b[None, :, 1]) & (b[None, :, 0] < a[:, None, 1])


def union_pattern(space: VectorSpace, restrict: bool = False) -> sp.csr_matrix:
    """Structural pattern of every block pairing of the two components.

    With ``restrict`` the pattern is taken on the free DOFs only.
    """
    comps = space.components
    sets = tensor_free_sets(space) if restrict else None
    blocks = [[None, None], [None, None]]
    for a, ca in enumerate(comps):
        for b, cb in enumerate(comps):
            ox = overlap_1d(ca.sx, cb.sx)
            oy = overlap_1d(ca.sy, cb.sy)
            if sets is not None:
                ox = ox[np.ix_(sets[a][0], sets[b][0])]
                oy = oy[np.ix_(sets[a][1], sets[b][1])]
            blocks[a][b] = sp.kron(sp.csr_matrix(oy.astype(np.int8)),
                                   sp.csr_matrix(ox.astype(np.int8)), format="csr")
    P = sp.bmat(blocks, format="csr")
    P.sort_indices()
    return P


def pattern_nnz(space: VectorSpace, restrict: bool = False) -> int:
    """``nnz`` of :func:`union_pattern` without building it."""
    comps = space.components
    sets = tensor_free_sets(space) if restrict else None
    total = 0
    for a, ca in enumerate(comps):
        for b, cb in enumerate(comps):
            ox = overlap_1d(ca.sx, cb.sx)
            oy = overlap_1d(ca.sy, cb.sy)
            if sets is not None:
                ox = ox[np.ix_(sets[a][0], sets[b][0])]
                oy = oy[np.ix_(sets[a][1], sets[b][1])]
            total += int(ox.sum()) * int(oy.sum())
    return total


# A block is a list of ``(coef, Y, X)`` terms meaning ``sum coef * kron(Y, X)``.
Terms = list


def _assemble_blocks(space: VectorSpace, blocks: dict, dtype, sets) -> sp.csr_matrix:
    """Sparse matrix with the values of ``blocks`` stored on the union pattern."""
    comps = space.components
    rows = [[None, None], [None, None]]
    for a, ca in enumerate(comps):
        for b, cb in enumerate(comps):
            ix = (sets[a][0], sets[b][0])
            iy = (sets[a][1], sets[b][1])
            ox = overlap_1d(ca.sx, cb.sx)[np.ix_(*ix)]
            oy = overlap_1d(ca.sy, cb.sy)[np.ix_(*iy)]
            vy_list, vx_list = [], []
            terms = blocks.get((a, b), [])
            if not terms:
                terms = [(0.0, np.zeros((ca.sy.n, cb.sy.n)), np.zeros((ca.sx.n, cb.sx.n)))]
            for coef, Y, X in terms:
                Y = np.asarray(Y)[np.ix_(*iy)]
                X = np.asarray(X)[np.ix_(*ix)]
                if np.any(Y[~oy]) or np.any(X[~ox]):
                    raise AssemblyError("matrix entry outside the support-overlap pattern")
                vy_list.append(coef * Y[oy])
                vx_list.append(X[ox])
            # every term lives on kron(oy, ox); values add entrywise
            Oy = sp.csr_matrix(oy.astype(np.int8))
            Ox = sp.csr_matrix(ox.astype(np.int8))
            data = None
            for vy, vx in zip(vy_list, vx_list):
                Ay = sp.csr_matrix((vy.astype(dtype), Oy.indices, Oy.indptr), shape=oy.shape)
                Ax = sp.csr_matrix((vx.astype(float), Ox.indices, Ox.indptr), shape=ox.shape)
                term = sp.kron(Ay, Ax, format="csr")
                if data is None:
                    data = term
                else:
                    data.data += term.data
            rows[a][b] = data
    A = sp.bmat(rows, format="csr")
    A.sort_indices()
    return A


def _finish(space: VectorSpace, problem: str, Kb, Cb, Mb, c_dtype, flags,
            keep_full: bool = False) -> QuadraticPencil:
    sets = tensor_free_sets(space)
    K = _assemble_blocks(space, Kb, float, sets)
    M = _assemble_blocks(space, Mb, float, sets)
    C = _assemble_blocks(space, Cb, c_dtype, sets)
    for A in (M, C):
        if not (np.array_equal(A.indptr, K.indptr) and np.array_equal(A.indices, K.indices)):
            raise AssemblyError("pencil matrices ended up on different patterns")
        A.indptr, A.indices = K.indptr, K.indices
    full = None
    if keep_full:
        open_space = space.with_constraints(())
        all_sets = tensor_free_sets(open_space)
        full = tuple(_assemble_blocks(open_space, B, dt, all_sets)
                     for B, dt in ((Kb, float), (Cb, c_dtype), (Mb, float)))
    pencil = QuadraticPencil(K, C, M, problem=problem, space=space, full=full, flags=flags)
    pencil.full_stats = (space.N, pattern_nnz(space))
    return pencil


# ---------------------------------------------------------------------------
# model problems


def assemble_em(space: VectorSpace, material: EmMaterial | None = None,
                apply_constraints: bool = True, keep_full: bool = False) -> QuadraticPencil:
    """Pencil of ``a(W,E) + w c(W,E) + w^2 b(W,E) = 0`` with E x n = 0 on the boundary.

    K = -mu^{-1} (curl, curl), C = -i (sigma ., .), M = eps (., .).
    """
    if space.kind != "curl":
        raise AssemblyError(f"electromagnetic problem needs a curl space, got {space.kind!r}")
    material = material or EmMaterial()
    material.check_aligned(space)
    space = space.with_constraints(boundary_mask(space, "em") if apply_constraints else ())
    g = space.geometry
    hx, hy = g.hx, g.hy
    det = hx * hy
    sx, sy = component_scales("curl", g)
    (Lx, Hy), (Hx, Ly) = (space.comp_x.sx, space.comp_x.sy), (space.comp_y.sx, space.comp_y.sy)
    mu, eps = material.mu, material.eps

    # curl phi_x = -sx Bx By' / hy ; curl phi_y = sy Cx' Cy / hx
    kxy = (1 / mu) * det * (sx / hy) * (sy / hx)
    Yxy, Xxy = gram_1d(Hy, 1, Ly, 0), gram_1d(Lx, 0, Hx, 1)
    Kb = {
        (0, 0): [(-(1 / mu) * det * (sx / hy) ** 2, gram_1d(Hy, 1, Hy, 1), gram_1d(Lx, 0, Lx, 0))],
        (1, 1): [(-(1 / mu) * det * (sy / hx) ** 2, gram_1d(Ly, 0, Ly, 0), gram_1d(Hx, 1, Hx, 1))],
        (0, 1): [(kxy, Yxy, Xxy)],
        (1, 0): [(kxy, Yxy.T, Xxy.T)],
    }
    Mb = {
        (0, 0): [(eps * det * sx ** 2, gram_1d(Hy, 0, Hy, 0), gram_1d(Lx, 0, Lx, 0))],
        (1, 1): [(eps * det * sy ** 2, gram_1d(Ly, 0, Ly, 0), gram_1d(Hx, 0, Hx, 0))],
    }

    def sig(component):
        return lambda t: material.sigma_at(g.y_range[0] + t * hy, component)

    if material.conductive:
        Cb = {
            (0, 0): [(-1j * det * sx ** 2, gram_1d(Hy, 0, Hy, 0, weight=sig(0)), gram_1d(Lx, 0, Lx, 0))],
            (1, 1): [(-1j * det * sy ** 2, gram_1d(Ly, 0, Ly, 0, weight=sig(1)), gram_1d(Hx, 0, Hx, 0))],
        }
        c_dtype = complex
    else:
        Cb, c_dtype = {}, float
    flags = {"K_symmetric": True, "M_spd": True, "C": "skew-hermitian" if material.conductive else "zero"}
    return _finish(space, "em" if material.conductive else "em-nonconductive",
                   Kb, Cb, Mb, c_dtype, flags, keep_full)


def assemble_acoustic(space: VectorSpace, material: AcousticMaterial | None = None,
                      apply_constraints: bool = True, keep_full: bool = False) -> QuadraticPencil:
    """Displacement pencil of the cavity with absorbing walls (all matrices real symmetric)."""
    if space.kind != "div":
        raise AssemblyError(f"acoustic problem needs a div space, got {space.kind!r}")
    material = material or AcousticMaterial()
    rigid = boundary_mask(space, "acoustic", material.rigid_edges) if apply_constraints else ()
    space = space.with_constraints(rigid)
    g = space.geometry
    hx, hy = g.hx, g.hy
    det = hx * hy
    sx, sy = component_scales("div", g)
    (Cx, Cy), (Bx, By) = (space.comp_x.sx, space.comp_x.sy), (space.comp_y.sx, space.comp_y.sy)
    rc2 = material.rho * material.c ** 2
    rho = material.rho
    a, b = material.alpha, material.beta

    # div phi_x = sx Cx' Cy / hx ; div phi_y = sy Bx By' / hy
    kxy = rc2 * det * (sx / hx) * (sy / hy)
    Yxy, Xxy = gram_1d(Cy, 0, By, 1), gram_1d(Cx, 1, Bx, 0)
    Kb = {
        (0, 0): [(rc2 * det * (sx / hx) ** 2, gram_1d(Cy, 0, Cy, 0), gram_1d(Cx, 1, Cx, 1))],
        (1, 1): [(rc2 * det * (sy / hy) ** 2, gram_1d(By, 1, By, 1), gram_1d(Bx, 0, Bx, 0))],
        (0, 1): [(kxy, Yxy, Xxy)],
        (1, 0): [(kxy, Yxy.T, Xxy.T)],
    }
    Mb = {
        (0, 0): [(rho * det * sx ** 2, gram_1d(Cy, 0, Cy, 0), gram_1d(Cx, 0, Cx, 0))],
        (1, 1): [(rho * det * sy ** 2, gram_1d(By, 0, By, 0), gram_1d(Bx, 0, Bx, 0))],
    }
    Cb: dict = {}
    for edge in material.absorbing_edges:
        k = normal_component(space, edge)
        comp = space.components[k]
        scale = (sx, sy)[k] ** 2
        if edge in ("bottom", "top"):
            e = np.zeros(comp.sy.n)
            e[0 if edge == "bottom" else -1] = 1.0
            Y, X, w = np.outer(e, e), gram_1d(comp.sx, 0, comp.sx, 0), scale * hx
        else:
            e = np.zeros(comp.sx.n)
            e[0 if edge == "left" else -1] = 1.0
            Y, X, w = gram_1d(comp.sy, 0, comp.sy, 0), np.outer(e, e), scale * hy
        Kb[(k, k)].append((a * w, Y, X))
        Cb.setdefault((k, k), []).append((b * w, Y, X))
    flags = {"K_symmetric": True, "M_spd": True, "C": "symmetric" if material.absorbing_edges else "zero"}
    return _finish(space, "acoustic", Kb, Cb, Mb, float, flags, keep_full)


def export_pencil(pencil: QuadraticPencil, outdir, prefix: str = "pencil", full: bool = False) -> list[Path]:
    """Write K, C, M as Matrix Market files (complex entries as ``re im`` pairs)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mats = pencil.full if full and pencil.full is not None else (pencil.K, pencil.C, pencil.M)
    paths = []
    for name, A in zip("KCM", mats):
        path = outdir / f"{prefix}_{name}.mtx"
        scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="general")
        paths.append(path)
    return paths
