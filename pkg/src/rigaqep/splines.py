"""Univariate B-spline machinery on uniform open knot vectors.

Evaluation follows the classical span search / triangular-table scheme
(Piegl & Tiller, The NURBS Book, A2.1-A2.3). Spaces are described by their
degree, element count and per-breakpoint multiplicities; the knot vector is
always regenerated from that description.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "ContinuityError",
    "KnotVector",
    "UnivariateSpace",
    "make_open_knots",
    "raise_separator_multiplicity",
    "find_span",
    "eval_basis",
    "eval_basis_derivatives",
]


class ContinuityError(ValueError):
    """Raised when a multiplicity or continuity request is out of range."""


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open (clamped) knot vector over [0, 1]."""

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        p = self.degree
        t = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", t)
        t.setflags(write=False)
        if p < 0:
            raise ContinuityError(f"degree must be nonnegative, got {p}")
        if np.any(np.diff(t) < 0):
            raise ValueError("knots must be nondecreasing")
        if not (np.all(t[: p + 1] == 0.0) and np.all(t[-(p + 1):] == 1.0)):
            raise ValueError("knot vector must be clamped to [0, 1]")
        if len(t) - p - 1 < p + 1:
            raise ValueError("too few knots for the requested degree")
        _, counts = np.unique(t[p + 1: len(t) - p - 1], return_counts=True)
        if counts.size and counts.max() > p:
            raise ContinuityError("interior multiplicity exceeds the degree")

    @property
    def n(self) -> int:
        return len(self.knots) - self.degree - 1

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))


def make_open_knots(p: int, ne: int, mult: Sequence[int] | None = None) -> KnotVector:
    """Open knot vector with ``ne`` uniform elements.

    ``mult`` holds one multiplicity per interior breakpoint ``i/ne``
    (``ne - 1`` entries); ``None`` means all ones (maximum continuity).
    """
    if p < 1:
        raise ContinuityError(f"degree must be >= 1, got {p}")
    if ne < 1:
        raise ValueError(f"need at least one element, got ne={ne}")
    if mult is None:
        mult = [1] * (ne - 1)
    mult = [int(m) for m in mult]
    if len(mult) != ne - 1:
        raise ValueError(f"expected {ne - 1} interior multiplicities, got {len(mult)}")
    for m in mult:
        if not 1 <= m <= p:
            raise ContinuityError(f"multiplicity {m} outside [1, {p}]")
    interior = np.repeat(np.arange(1, ne) / ne, mult)
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)


@dataclass(frozen=True)
class UnivariateSpace:
    """Spline space of given degree on ``ne`` uniform elements.

    ``mults[i]`` is the multiplicity of breakpoint ``(i + 1) / ne``.
    """

    degree: int
    ne: int
    mults: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mults", tuple(int(m) for m in self.mults))
        # validates ranges
        self.kv  # noqa: B018

    @classmethod
    def uniform(cls, degree: int, ne: int) -> "UnivariateSpace":
        return cls(degree, ne, (1,) * (ne - 1))

    @cached_property
    def kv(self) -> KnotVector:
        return make_open_knots(self.degree, self.ne, self.mults)

    @property
    def n(self) -> int:
        return self.ne + self.degree + sum(m - 1 for m in self.mults)

    @property
    def continuity(self) -> tuple[int, ...]:
        return tuple(self.degree - m for m in self.mults)

    @cached_property
    def support_elements(self) -> np.ndarray:
        """``(n, 2)`` array of [first, last) element indices of each basis support."""
        t = self.kv.knots
        p = self.degree
        lo = np.rint(t[: self.n] * self.ne).astype(int)
        hi = np.rint(t[p + 1: p + 1 + self.n] * self.ne).astype(int)
        return np.stack([lo, hi], axis=1)

    @cached_property
    def element_first_basis(self) -> np.ndarray:
        """Index of the first nonzero basis function on each element."""
        t = self.kv.knots
        # last knot index whose value equals the element's left end
        left = np.arange(self.ne) / self.ne
        span = np.searchsorted(t, left, side="right") - 1
        return span - self.degree


def raise_separator_multiplicity(space: UnivariateSpace, separator_breakpoints,
                                 target_continuity: int) -> UnivariateSpace:
    """Lower continuity to ``target_continuity`` at the given breakpoints.

    Breakpoints are identified by their index ``b`` in ``1..ne-1`` (location
    ``b/ne``). Breakpoints already at or below the target are left unchanged.
    """
    if target_continuity not in (0, 1):
        raise ContinuityError(f"target continuity must be 0 or 1, got {target_continuity}")
    p = space.degree
    new_mult = p - target_continuity
    if new_mult < 1:
        raise ContinuityError(f"C{target_continuity} is not below the maximum for degree {p}")
    mults = list(space.mults)
    unchanged = []
    for b in separator_breakpoints:
        b = int(b)
        if not 1 <= b <= space.ne - 1:
            raise ValueError(f"breakpoint index {b} is not interior")
        if mults[b - 1] >= new_mult:
            unchanged.append(b)
        else:
            mults[b - 1] = new_mult
    if unchanged:
        warnings.warn(f"continuity already <= C{target_continuity} at breakpoints {unchanged}",
                      stacklevel=2)
    return UnivariateSpace(p, space.ne, tuple(mults))


def find_span(kv: KnotVector, u: float) -> int:
    """Knot span index ``i`` with ``knots[i] <= u < knots[i+1]`` (closed at u=1)."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"parameter {u} outside [0, 1]")
    t = kv.knots
    n = kv.n
    if u >= t[n]:
        return n - 1
    return int(np.searchsorted(t, u, side="right")) - 1


def eval_basis(kv: KnotVector, u: float) -> tuple[int, np.ndarray]:
    """Values of the ``p+1`` basis functions that are nonzero at ``u``.

    Returns ``(span, values)``; ``values[r]`` belongs to basis ``span - p + r``.
    """
    span = find_span(kv, u)
    return span, _basis_funs(kv.knots, kv.degree, span, u)


def _basis_funs(t, p, span, u):
    N = np.empty(p + 1)
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    N[0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - t[span + 1 - j]
        right[j] = t[span + j] - u
        saved = 0.0
        for r in range(j):
            # knot differences here are nonzero on a nonempty span
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    return N


def eval_basis_derivatives(kv: KnotVector, u: float, max_order: int) -> tuple[int, np.ndarray]:
    """Triangular-table evaluation of basis values and derivatives.

    Returns ``(span, ders)`` where ``ders[k, r]`` is the k-th derivative of
    basis ``span - p + r``.
    """
    p = kv.degree
    if max_order > p:
        raise ValueError(f"derivative order {max_order} exceeds degree {p}")
    span = find_span(kv, u)
    return span, _ders_basis_funs(kv.knots, p, span, u, max_order)


def _ders_basis_funs(t, p, span, u, n):
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - t[span + 1 - j]
        right[j] = t[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, n + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def basis_matrix(space: UnivariateSpace, u, max_order: int = 0):
    """Dense ``(max_order+1, len(u), n)`` table of basis values/derivatives at points ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    kv = space.kv
    p = space.degree
    out = np.zeros((max_order + 1, u.size, space.n))
    for q, uq in enumerate(u):
        span, d = eval_basis_derivatives(kv, float(uq), max_order)
        out[:, q, span - p: span + 1] = d
    return out
