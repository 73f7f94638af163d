"""Analytic reference modes and error metrics.

Two references are available: the Maxwell eigenpairs of the perfectly
conducting unit square, and the purely real modes of a rectangular cavity
(width ``a``, height ``b``) whose top wall is absorbing. The latter are the
roots in ``lam`` of the dispersion relation

    g(lam) = eta tanh(eta b) + rho lam^2 / (alpha + lam beta),
    eta^2 = lam^2 / c^2 + (j pi / a)^2,

with displacement ``u = -1/(rho lam^2) grad[cos(j pi x / a) cosh(eta y)]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .assembly import AcousticMaterial, gauss_legendre
from .spaces import VectorSpace, component_grid_values, component_scales

__all__ = [
    "OracleError", "EmAnalyticMode", "AcousticAnalyticMode", "em_analytic",
    "acoustic_dispersion_roots", "dispersion_residual", "eigenvalue_error",
    "eigenfunction_l2_error", "mode_overlap",
]

BRACKET_SAMPLES = 400
SERIES_CUTOFF = 1e-4


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class EmAnalyticMode:
    i: int
    j: int

    @property
    def lam(self) -> float:
        return np.pi ** 2 * (self.i ** 2 + self.j ** 2)

    @property
    def omega(self) -> float:
        return float(np.sqrt(self.lam))

    def field(self, x, y) -> np.ndarray:
        """``E_ij`` at points ``(x, y)``; returns an array of shape ``(2,) + x.shape``."""
        i, j = self.i, self.j
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        # unit L2 norm on the unit square; cos^2 integrates to 1 (not 1/2) for index 0
        half = lambda k: 1.0 if k == 0 else 0.5  # noqa: E731
        f = 1.0 / np.sqrt(j * j * half(i) * 0.5 + i * i * 0.5 * half(j))
        ex = -j * np.cos(i * np.pi * x) * np.sin(j * np.pi * y)
        ey = i * np.sin(i * np.pi * x) * np.cos(j * np.pi * y)
        return f * np.stack([ex, ey])


def em_analytic(i: int, j: int) -> EmAnalyticMode:
    if i < 0 or j < 0 or (i == 0 and j == 0):
        raise OracleError(f"invalid Maxwell mode ({i}, {j})")
    return EmAnalyticMode(int(i), int(j))


@dataclass(frozen=True)
class AcousticAnalyticMode:
    j: int
    branch: int
    lam: float
    eta: float
    material: AcousticMaterial
    a: float = 1.0
    b: float = 1.0

    def field(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        k = self.j * np.pi / self.a
        f = -1.0 / (self.material.rho * self.lam ** 2)
        ux = -k * np.sin(k * x) * np.cosh(self.eta * y)
        uy = self.eta * np.cos(k * x) * np.sinh(self.eta * y)
        return f * np.stack([ux, uy])


def _eta(lam, j, material, a):
    return np.sqrt(lam ** 2 / material.c ** 2 + (np.pi * j / a) ** 2)


def _eta_tanh(eta, b):
    eb = eta * b
    if abs(eb) < SERIES_CUTOFF:
        return eta * eb * (1.0 - eb * eb / 3.0)
    return eta * np.tanh(eb)


def dispersion_residual(lam: float, j: int, material: AcousticMaterial,
                        a: float = 1.0, b: float = 1.0) -> float:
    eta = _eta(lam, j, material, a)
    return float(_eta_tanh(eta, b) + material.rho * lam ** 2 / (material.alpha + lam * material.beta))


def _branch_interval(branch: int, material: AcousticMaterial) -> tuple[float, float]:
    r = material.alpha / material.beta
    if branch == 1:
        return -2 * r, -r
    if branch == 2:
        return -50 * r, -2 * r
    raise OracleError(f"branch must be 1 or 2, got {branch}")


def acoustic_dispersion_roots(j: int, branch: int, material: AcousticMaterial | None = None,
                              a: float = 1.0, b: float = 1.0) -> AcousticAnalyticMode:
    """Purely real root of the dispersion relation for wavenumber index ``j``.

    The branch interval is sampled uniformly; the sign change nearest the
    branch's upper end is refined by Brent's method and polished by Newton.
    """
    material = material or AcousticMaterial()
    if j < 0:
        raise OracleError("j must be nonnegative")
    lo, hi = _branch_interval(branch, material)
    g = lambda lam: dispersion_residual(lam, j, material, a, b)  # noqa: E731
    # branch 2 is unbounded below: widen the window until a sign change shows up
    for _ in range(4 if branch == 2 else 1):
        # open interval: the endpoint -alpha/beta is a pole of g
        grid = np.linspace(lo, hi, BRACKET_SAMPLES + 2)[1:-1]
        vals = np.array([g(t) for t in grid])
        idx = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
        if len(idx):
            break
        lo, hi = 8 * lo, lo
    else:
        raise OracleError(f"no root of the dispersion relation for j={j} on branch {branch}")
    k = idx[-1]
    lam = brentq(g, grid[k], grid[k + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    for _ in range(3):
        h = 1e-6 * max(1.0, abs(lam))
        d = (g(lam + h) - g(lam - h)) / (2 * h)
        if d == 0:
            break
        step = g(lam) / d
        if not grid[k] <= lam - step <= grid[k + 1]:
            break
        lam -= step
    res = abs(g(lam))
    if res > 1e-10:
        raise OracleError(f"dispersion residual {res:.2e} above 1e-10 for j={j}")
    return AcousticAnalyticMode(int(j), branch, float(lam), float(_eta(lam, j, material, a)),
                                material, a, b)


def eigenvalue_error(lam_h, lam) -> float:
    """Signed relative error ``(lam_h - lam) / lam``."""
    if lam == 0:
        raise OracleError("relative error undefined for lam = 0")
    return float(np.real((lam_h - lam) / lam))


def _quadrature_grid(space: VectorSpace):
    g = space.geometry
    npts = 2 * (space.degree + 1)
    x, w = gauss_legendre(npts)
    ne = space.ne
    left = np.arange(ne)[:, None] / ne
    xi = (left + (x[None, :] + 1) / (2 * ne)).ravel()
    wi = np.tile(w / (2 * ne), ne)
    X = g.x_range[0] + xi * g.hx
    Y = g.y_range[0] + xi * g.hy
    W = np.outer(wi * g.hx, wi * g.hy)
    return xi, X, Y, W


def _discrete_field(space: VectorSpace, coeffs, xi) -> np.ndarray:
    c = np.asarray(coeffs)
    if c.shape[0] == space.n_free and space.n_free != space.N:
        c = space.expand(c)
    if c.shape[0] != space.N:
        raise OracleError(f"coefficient vector has length {c.shape[0]}, expected {space.N}")
    sc = component_scales(space.kind, space.geometry)
    out = []
    for k, comp in enumerate(space.components):
        off = space.offsets[k]
        out.append(sc[k] * component_grid_values(comp, c[off: off + comp.n], xi, xi))
    return np.stack(out)


def _inner(f, h, W) -> complex:
    return complex(np.sum(W * np.sum(f * np.conj(h), axis=0)))


def align_phase(uh: np.ndarray, u: np.ndarray, W: np.ndarray) -> complex:
    """Factor making ``<alpha uh, u>`` real positive and ``||alpha uh|| = ||u||``."""
    nh = np.sqrt(_inner(uh, uh, W).real)
    if nh == 0:
        raise OracleError("discrete eigenfunction is zero")
    ip = _inner(uh, u, W)
    phase = np.conj(ip) / abs(ip) if abs(ip) > 0 else 1.0
    return phase * np.sqrt(_inner(u, u, W).real) / nh


def eigenfunction_l2_error(space: VectorSpace, coefficients, mode, relative: bool = False) -> float:
    """``||alpha u_h - u||_{L2}`` after phase/norm alignment (divided by ``||u||`` if ``relative``)."""
    xi, X, Y, W = _quadrature_grid(space)
    uh = _discrete_field(space, coefficients, xi)
    XX, YY = np.meshgrid(X, Y, indexing="ij")
    u = mode.field(XX, YY)
    alpha = align_phase(uh, u, W)
    d = alpha * uh - u
    err = float(np.sqrt(_inner(d, d, W).real))
    return err / np.sqrt(_inner(u, u, W).real) if relative else err


def mode_overlap(space: VectorSpace, coefficients, mode) -> float:
    """``|<u_h, u>| / (||u_h|| ||u||)``, 1 for a perfect match."""
    xi, X, Y, W = _quadrature_grid(space)
    uh = _discrete_field(space, coefficients, xi)
    XX, YY = np.meshgrid(X, Y, indexing="ij")
    u = mode.field(XX, YY)
    den = np.sqrt(_inner(uh, uh, W).real * _inner(u, u, W).real)
    if den == 0:
        raise OracleError("zero function in overlap")
    return abs(_inner(uh, u, W)) / den
