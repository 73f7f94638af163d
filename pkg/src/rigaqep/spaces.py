"""Curl- and divergence-conforming tensor-product spline spaces on a box.

DOFs are numbered component-wise: all x-component functions first, then the
y-component ones. Inside a component, basis ``(i, j)`` (i along x) gets the
local index ``j * nx + i``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Literal

import numpy as np

from .splines import UnivariateSpace, basis_matrix, raise_separator_multiplicity

Kind = Literal["curl", "div"]
EDGES = ("left", "right", "bottom", "top")

__all__ = [
    "BoxGeometry", "TensorSpace2D", "Partition", "VectorSpace",
    "build_iga_space", "build_riga_space", "boundary_mask", "piola_map",
    "evaluate_field", "SpaceError",
]


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class BoxGeometry:
    x_range: tuple[float, float] = (0.0, 1.0)
    y_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        (x0, x1), (y0, y1) = self.x_range, self.y_range
        if not (x1 > x0 and y1 > y0):
            raise SpaceError(f"degenerate box {self.x_range} x {self.y_range}")

    @property
    def hx(self) -> float:
        return self.x_range[1] - self.x_range[0]

    @property
    def hy(self) -> float:
        return self.y_range[1] - self.y_range[0]

    @property
    def jacobian(self) -> np.ndarray:
        return np.diag([self.hx, self.hy])

    def to_parametric(self, x, y):
        return (np.asarray(x) - self.x_range[0]) / self.hx, (np.asarray(y) - self.y_range[0]) / self.hy


@dataclass(frozen=True)
class TensorSpace2D:
    sx: UnivariateSpace
    sy: UnivariateSpace

    @property
    def dims(self) -> tuple[int, int]:
        return self.sx.n, self.sy.n

    @property
    def n(self) -> int:
        return self.sx.n * self.sy.n

    @property
    def degrees(self) -> tuple[int, int]:
        return self.sx.degree, self.sy.degree


@dataclass(frozen=True)
class Partition:
    """Symmetric recursive bisection into ``2**levels`` blocks per direction."""

    levels: int
    ne: int

    def __post_init__(self):
        if self.levels < 0:
            raise SpaceError("partition levels must be >= 0")
        blocks = 2 ** self.levels
        if self.ne % blocks:
            raise SpaceError(f"ne={self.ne} is not divisible by 2**levels={blocks}")
        if self.levels and self.ne // blocks < 2:
            raise SpaceError(f"macroelements of {self.ne // blocks} element(s) are too small")

    @property
    def blocks(self) -> int:
        return 2 ** self.levels

    @property
    def macro_size(self) -> int:
        return self.ne // self.blocks

    @property
    def separators(self) -> tuple[int, ...]:
        """Interior breakpoint indices of the macroelement interfaces."""
        m = self.macro_size
        return tuple(range(m, self.ne, m))


@dataclass(frozen=True)
class VectorSpace:
    kind: Kind
    degree: int
    ne: int
    comp_x: TensorSpace2D
    comp_y: TensorSpace2D
    geometry: BoxGeometry
    partition: Partition
    constrained: frozenset = field(default_factory=frozenset)

    @property
    def Nx(self) -> int:
        return self.comp_x.n

    @property
    def Ny(self) -> int:
        return self.comp_y.n

    @property
    def N(self) -> int:
        return self.Nx + self.Ny

    @property
    def components(self) -> tuple[TensorSpace2D, TensorSpace2D]:
        return self.comp_x, self.comp_y

    @property
    def offsets(self) -> tuple[int, int]:
        return 0, self.Nx

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.N, dtype=bool)
        if self.constrained:
            mask[np.fromiter(self.constrained, dtype=np.int64)] = False
        return np.flatnonzero(mask)

    @property
    def n_free(self) -> int:
        return self.N - len(self.constrained)

    def with_constraints(self, dofs: Iterable[int]) -> "VectorSpace":
        return replace(self, constrained=frozenset(int(d) for d in dofs))

    @cached_property
    def dof_supports(self) -> np.ndarray:
        """``(N, 4)`` element-index supports ``[x_lo, x_hi, y_lo, y_hi)`` of every DOF."""
        rows = []
        for comp in self.components:
            nx, ny = comp.dims
            xs = comp.sx.support_elements
            ys = comp.sy.support_elements
            ii = np.tile(np.arange(nx), ny)
            jj = np.repeat(np.arange(ny), nx)
            rows.append(np.column_stack([xs[ii, 0], xs[ii, 1], ys[jj, 0], ys[jj, 1]]))
        return np.vstack(rows)

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        """Embed a free-DOF vector into the full space (constrained DOFs = 0)."""
        reduced = np.asarray(reduced)
        full = np.zeros(self.N, dtype=np.result_type(reduced.dtype, float))
        full[self.free_dofs] = reduced
        return full


def _component_spaces(kind: Kind, p: int, ne: int):
    high = UnivariateSpace.uniform(p, ne)
    low = UnivariateSpace.uniform(p - 1, ne)
    if kind == "curl":
        return TensorSpace2D(low, high), TensorSpace2D(high, low)
    if kind == "div":
        return TensorSpace2D(high, low), TensorSpace2D(low, high)
    raise SpaceError(f"unknown space kind {kind!r}")


def build_iga_space(kind: Kind, p: int, ne: int, geometry: BoxGeometry | None = None) -> VectorSpace:
    """Maximum-continuity space: C^{p-1} in degree-p directions, C^{p-2} otherwise."""
    if p < 2:
        raise SpaceError(f"degree p={p} unsupported; need p >= 2")
    if ne < 2:
        raise SpaceError(f"need ne >= 2, got {ne}")
    cx, cy = _component_spaces(kind, p, ne)
    return VectorSpace(kind, p, ne, cx, cy, geometry or BoxGeometry(), Partition(0, ne))


def build_riga_space(kind: Kind, p: int, ne: int, levels: int,
                     geometry: BoxGeometry | None = None) -> VectorSpace:
    """Refined space with reduced-continuity hyperplanes at macroelement interfaces.

    Degree-(p-1) directions drop to C0 and degree-p directions to C1 across
    every separator, at all partition levels alike.
    """
    base = build_iga_space(kind, p, ne, geometry)
    part = Partition(levels, ne)
    if levels == 0:
        return base
    seps = part.separators

    def refine(s: UnivariateSpace) -> UnivariateSpace:
        target = 0 if s.degree == p - 1 else 1
        with warnings.catch_warnings():
            # low degrees may already sit at the target continuity
            warnings.simplefilter("ignore")
            return raise_separator_multiplicity(s, seps, target)

    cx = TensorSpace2D(refine(base.comp_x.sx), refine(base.comp_x.sy))
    cy = TensorSpace2D(refine(base.comp_y.sx), refine(base.comp_y.sy))
    return replace(base, comp_x=cx, comp_y=cy, partition=part)


def edge_dofs(space: VectorSpace, edge: str, component: int) -> np.ndarray:
    """Global indices of ``component``'s DOFs whose basis is nonzero on ``edge``."""
    comp = space.components[component]
    nx, ny = comp.dims
    off = space.offsets[component]
    if edge in ("left", "right"):
        i = 0 if edge == "left" else nx - 1
        return off + np.arange(ny) * nx + i
    if edge in ("bottom", "top"):
        j = 0 if edge == "bottom" else ny - 1
        return off + j * nx + np.arange(nx)
    raise SpaceError(f"unknown edge {edge!r}")


def normal_component(space: VectorSpace, edge: str) -> int:
    """Index of the field component that carries the normal trace on ``edge``."""
    # div: comp_x is the x-field; curl: comp_x is also the x-field
    return 0 if edge in ("left", "right") else 1


def boundary_mask(space: VectorSpace, problem: str, rigid_edges: Iterable[str] = ()) -> set[int]:
    """Constrained DOFs: tangential traces for ``em``, normal traces on rigid edges for ``acoustic``."""
    out: set[int] = set()
    if problem in ("em", "em-nonconductive"):
        for edge in EDGES:
            # tangential field on horizontal edges is E_x, on vertical edges E_y
            comp = 0 if edge in ("bottom", "top") else 1
            out.update(edge_dofs(space, edge, comp).tolist())
    elif problem == "acoustic":
        for edge in rigid_edges:
            out.update(edge_dofs(space, edge, normal_component(space, edge)).tolist())
    else:
        raise SpaceError(f"unknown problem {problem!r}")
    return out


def component_scales(kind: Kind, geometry: BoxGeometry) -> tuple[float, float]:
    """Diagonal Piola factors taking parametric components to physical ones."""
    hx, hy = geometry.hx, geometry.hy
    if kind == "curl":
        return 1.0 / hx, 1.0 / hy
    return hx / (hx * hy), hy / (hx * hy)


def piola_map(kind: Kind, geometry: BoxGeometry, parametric_value, parametric_gradients=None):
    """Push a parametric vector field (and optionally its Jacobian) to the box.

    ``parametric_gradients[c, d]`` is the derivative of component ``c`` with
    respect to parametric coordinate ``d``.
    """
    if np.linalg.det(geometry.jacobian) <= 0:
        raise SpaceError("singular geometry map")
    sc = np.array(component_scales(kind, geometry))
    val = sc * np.asarray(parametric_value, dtype=float)
    if parametric_gradients is None:
        return val
    g = np.asarray(parametric_gradients, dtype=float)
    h = np.array([geometry.hx, geometry.hy])
    return val, sc[:, None] * g / h[None, :]


def component_grid_values(comp: TensorSpace2D, coeffs: np.ndarray, xi, eta, dx=0, dy=0):
    """Evaluate one scalar component on the tensor grid ``xi x eta``.

    Returns an array of shape ``(len(xi), len(eta))``.
    """
    bx = basis_matrix(comp.sx, xi, dx)[dx]
    by = basis_matrix(comp.sy, eta, dy)[dy]
    nx, ny = comp.dims
    c = np.asarray(coeffs).reshape(ny, nx)
    return bx @ c.T @ by.T


def evaluate_field(space: VectorSpace, coefficients, physical_point) -> np.ndarray:
    """Physical field value at a point; ``coefficients`` may be full-length or free-DOF length."""
    c = np.asarray(coefficients)
    if c.shape[0] == space.n_free and space.n_free != space.N:
        c = space.expand(c)
    if c.shape[0] != space.N:
        raise SpaceError(f"coefficient vector has length {c.shape[0]}, expected {space.N}")
    x, y = physical_point
    g = space.geometry
    if not (g.x_range[0] <= x <= g.x_range[1] and g.y_range[0] <= y <= g.y_range[1]):
        raise SpaceError(f"point {physical_point} outside the domain")
    xi, eta = g.to_parametric(x, y)
    sc = component_scales(space.kind, g)
    vals = []
    for k, comp in enumerate(space.components):
        off = space.offsets[k]
        vals.append(sc[k] * component_grid_values(comp, c[off: off + comp.n], [xi], [eta])[0, 0])
    return np.array(vals)


def tensor_free_sets(space: VectorSpace) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-component free index sets ``(free_i, free_j)`` along x and y.

    Only constraint sets made of whole lines of basis functions (i.e. edge
    traces) have this tensor form; anything else raises ``SpaceError``.
    """
    out = []
    cons = space.constrained
    for k, comp in enumerate(space.components):
        nx, ny = comp.dims
        off = space.offsets[k]
        mask = np.zeros(comp.n, dtype=bool)
        local = [d - off for d in cons if off <= d < off + comp.n]
        mask[np.asarray(local, dtype=np.int64)] = True
        mask = mask.reshape(ny, nx)
        dead_i = mask.all(axis=0)
        dead_j = mask.all(axis=1)
        rebuilt = dead_i[None, :] | dead_j[:, None]
        if not np.array_equal(rebuilt, mask):
            raise SpaceError("constraint set is not a union of edge traces")
        out.append((np.flatnonzero(~dead_i), np.flatnonzero(~dead_j)))
    return out
