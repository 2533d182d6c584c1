"""Localization and smoothing kernels plus their clipped moment constants.

The localization kernel is a product of a symmetric bounded-support base
kernel over coordinates. The smoothing kernel g is a symmetric higher-order
polynomial kernel on [-1, 1]; its survival function G enters the smoothed
check loss. Moment constants over axis-aligned clippings of the kernel
support feed the boundary-aware variance and bias formulas.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import EmptyRegion, SingularC

_BASE_KERNELS = {
    # coefficients in ascending powers of u, valid on |u| <= 1
    "epanechnikov": (0.75, 0.0, -0.75),
    "uniform": (0.5,),
    "biweight": (15.0 / 16.0, 0.0, -30.0 / 16.0, 0.0, 15.0 / 16.0),
}


@dataclass(frozen=True)
class KernelSpec:
    """Product kernel built from a symmetric base kernel on [-1, 1]."""

    base: str = "epanechnikov"

    def __post_init__(self):
        if self.base not in _BASE_KERNELS:
            raise ValueError(
                f"unknown kernel {self.base!r}; choose from {sorted(_BASE_KERNELS)}"
            )

    @property
    def coeffs(self) -> tuple:
        return _BASE_KERNELS[self.base]


EPANECHNIKOV = KernelSpec("epanechnikov")


def kernel_profile(spec: KernelSpec, u):
    """One-coordinate kernel value, zero outside [-1, 1]."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    vals = npoly.polyval(u, spec.coeffs)
    return np.where(inside, vals, 0.0)


def kernel_value(spec: KernelSpec, v) -> float:
    """Product kernel at a d-vector; zero outside the unit cube."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return float(np.prod(kernel_profile(spec, v)))


def kernel_weights(spec: KernelSpec, u: np.ndarray) -> np.ndarray:
    """Product-kernel values for an array of points with trailing dim d."""
    return np.prod(kernel_profile(spec, u), axis=-1)


@dataclass(frozen=True)
class SmootherSpec:
    """Polynomial smoothing kernel of order ``order`` with support [-1, 1]."""

    coeffs: tuple
    order: int = 4

    def __post_init__(self):
        if self.order < 4:
            raise ValueError("smoothing kernel order must be at least 4")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))


def quartic_smoother() -> SmootherSpec:
    """Fourth-order polynomial smoothing kernel 105/64 (1 - 5u^2 + 7u^4 - 3u^6)."""
    s = 105.0 / 64.0
    return SmootherSpec(coeffs=(s, 0.0, -5.0 * s, 0.0, 7.0 * s, 0.0, -3.0 * s), order=4)


DEFAULT_SMOOTHER = quartic_smoother()


@lru_cache(maxsize=None)
def _antideriv_coeffs(coeffs: tuple) -> tuple:
    return tuple(npoly.polyint(np.asarray(coeffs)))


@lru_cache(maxsize=None)
def _deriv_coeffs(coeffs: tuple, n: int) -> tuple:
    return tuple(npoly.polyder(np.asarray(coeffs), n)) if n else coeffs


def smoother_g(spec: SmootherSpec, v):
    """Smoothing kernel value, zero outside [-1, 1]."""
    v = np.asarray(v, dtype=float)
    out = np.where(np.abs(v) <= 1.0, npoly.polyval(v, spec.coeffs), 0.0)
    return float(out) if out.ndim == 0 else out


def smoother_G(spec: SmootherSpec, z):
    """Survival function 1 - integral of g up to z; 1 below the support, 0 above."""
    z = np.asarray(z, dtype=float)
    anti = np.asarray(_antideriv_coeffs(spec.coeffs))
    inner = 1.0 - (npoly.polyval(z, anti) - npoly.polyval(-1.0, anti))
    out = np.where(z <= -1.0, 1.0, np.where(z >= 1.0, 0.0, inner))
    return float(out) if out.ndim == 0 else out


def smoother_derivs(spec: SmootherSpec, v):
    """(g, g', g'') at v, all zero outside the support."""
    v = np.asarray(v, dtype=float)
    inside = np.abs(v) <= 1.0
    g0 = np.where(inside, npoly.polyval(v, spec.coeffs), 0.0)
    g1 = np.where(inside, npoly.polyval(v, _deriv_coeffs(spec.coeffs, 1)), 0.0)
    g2 = np.where(inside, npoly.polyval(v, _deriv_coeffs(spec.coeffs, 2)), 0.0)
    if g0.ndim == 0:
        return float(g0), float(g1), float(g2)
    return g0, g1, g2


# --- clipped moment constants ----------------------------------------------

@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple:
    """Gauss-Legendre nodes and weights on [-1, 1], symmetrized bit-exactly."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _interval_moments(
    spec: KernelSpec, lo: float, hi: float, max_power: int, squared: bool, n_nodes: int
) -> np.ndarray:
    """1-d integrals of u^p * k(u) (or k(u)^2) over [lo, hi] for p = 0..max_power.

    Odd moments over a symmetric interval are exactly zero (the base kernel
    is symmetric); this exactness is relied on by the bias formulas.
    """
    nodes, wts = gauss_legendre(n_nodes)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    u = mid + half * nodes
    k = npoly.polyval(u, spec.coeffs)
    if squared:
        k = k * k
    w = wts * half * k
    out = np.empty(max_power + 1)
    up = np.ones_like(u)
    symmetric = lo == -hi
    for p in range(max_power + 1):
        out[p] = 0.0 if (symmetric and p % 2 == 1) else float(np.dot(w, up))
        up = up * u
    return out


def _clip_box(geometry) -> tuple:
    box = []
    for lo, hi in geometry:
        lo = max(float(lo), -1.0)
        hi = min(float(hi), 1.0)
        if not hi > lo:
            raise EmptyRegion(f"clipped interval [{lo}, {hi}] has no positive width")
        box.append((lo, hi))
    if not box:
        raise EmptyRegion("geometry must have at least one coordinate")
    return tuple(box)


def interior_box(dim: int) -> tuple:
    """The unclipped kernel support, one (-1, 1) interval per coordinate."""
    return tuple((-1.0, 1.0) for _ in range(dim))


def box_moment(
    spec: KernelSpec, geometry, powers, squared: bool = False, n_nodes: int = 32
) -> float:
    """Integral of u_1^p1 ... u_d^pd times K(u) (or K(u)^2) over the clipped box."""
    box = _clip_box(geometry)
    powers = tuple(int(p) for p in powers)
    if len(powers) != len(box):
        raise ValueError("powers must match the geometry dimension")
    val = 1.0
    for (lo, hi), p in zip(box, powers):
        val *= _interval_moments(spec, lo, hi, p, squared, n_nodes)[p]
    return val


@dataclass(frozen=True)
class MomentSet:
    """Kernel integral constants for one integration geometry.

    Clipped-box integrals of the product kernel K and of K^2:

    - ``m0``, ``m1``, ``m2``: mass, first and second moments of K over the box
    - ``q0``, ``q1``: mass and first moment of K^2 over the box
    - ``m2_centered``: m2 - m1 m1' / m0
    - ``m2_bordered``: [[m0, m1'], [m1, m2]]

    Full-support integrals (independent of clipping):

    - ``m2_full``: second moment of K
    - ``q2_full``: second moment of K^2

    ``variance_shape`` is the sandwich
    m2_centered^-1 [ int (u - m1/m0)(u - m1/m0)' K^2 ] m2_centered^-1,
    which collapses to m2_full^-1 q2_full m2_full^-1 on an unclipped box.
    """

    kernel: KernelSpec
    box: tuple
    n_nodes: int
    m0: float
    m1: np.ndarray
    m2: np.ndarray
    m2_bordered: np.ndarray
    m2_centered: np.ndarray
    q0: float
    q1: np.ndarray
    m2_full: np.ndarray
    q2_full: np.ndarray
    variance_shape: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.box)


def _assemble_second(moms: list[np.ndarray]) -> np.ndarray:
    d = len(moms)
    mass = [m[0] for m in moms]
    out = np.empty((d, d))
    for j in range(d):
        for l in range(d):
            others = [mass[o] for o in range(d) if o not in (j, l)]
            if j == l:
                out[j, j] = moms[j][2] * np.prod(others) if others else moms[j][2]
            else:
                out[j, l] = moms[j][1] * moms[l][1] * (np.prod(others) if others else 1.0)
    return out


def compute_moments(spec: KernelSpec, geometry, n_nodes: int = 32) -> MomentSet:
    """Compute every moment constant for one clipped-box geometry.

    ``geometry`` is a sequence of per-coordinate (lo, hi) intervals, the
    axis-aligned clipping of the kernel support induced by the regressor
    support around the evaluation point. Tensor-product Gauss-Legendre
    quadrature with ``n_nodes`` points per dimension is exact for the
    polynomial kernels shipped here.
    """
    box = _clip_box(geometry)
    d = len(box)
    mk = [_interval_moments(spec, lo, hi, 2, False, n_nodes) for lo, hi in box]
    qk = [_interval_moments(spec, lo, hi, 2, True, n_nodes) for lo, hi in box]
    mk_full = _interval_moments(spec, -1.0, 1.0, 2, False, n_nodes)
    qk_full = _interval_moments(spec, -1.0, 1.0, 2, True, n_nodes)

    m0 = float(np.prod([m[0] for m in mk]))
    if m0 < 1e-12:
        raise EmptyRegion(f"kernel mass over the clipped box is {m0:g}")
    q0 = float(np.prod([q[0] for q in qk]))

    def first_moment(moms):
        vec = np.empty(d)
        for j in range(d):
            others = [moms[l][0] for l in range(d) if l != j]
            vec[j] = moms[j][1] * (np.prod(others) if others else 1.0)
        return vec

    m1 = first_moment(mk)
    q1 = first_moment(qk)
    m2 = _assemble_second(mk)
    m2_full = np.diag([mk_full[2] * mk_full[0] ** (d - 1)] * d)
    q2_full = np.diag([qk_full[2] * qk_full[0] ** (d - 1)] * d)

    m2_centered = m2 - np.outer(m1, m1) / m0
    m2_bordered = np.empty((d + 1, d + 1))
    m2_bordered[0, 0] = m0
    m2_bordered[0, 1:] = m1
    m2_bordered[1:, 0] = m1
    m2_bordered[1:, 1:] = m2

    # centered second moment of K^2 over the box, around a = m1/m0
    a = m1 / m0
    inner = np.empty((d, d))
    for j in range(d):
        for l in range(d):
            others = [qk[o][0] for o in range(d) if o not in (j, l)]
            prod = np.prod(others) if others else 1.0
            if j == l:
                inner[j, j] = (qk[j][2] - 2.0 * a[j] * qk[j][1] + a[j] ** 2 * qk[j][0]) * prod
            else:
                inner[j, l] = (qk[j][1] - a[j] * qk[j][0]) * (qk[l][1] - a[l] * qk[l][0]) * prod

    eig = np.linalg.eigvalsh(m2_centered)
    if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
        raise SingularC("centered second-moment matrix is singular for this geometry")
    omega = np.linalg.solve(m2_centered, np.linalg.solve(m2_centered, inner).T).T

    return MomentSet(
        kernel=spec,
        box=box,
        n_nodes=n_nodes,
        m0=m0,
        m1=m1,
        m2=m2,
        m2_bordered=m2_bordered,
        m2_centered=m2_centered,
        q0=q0,
        q1=q1,
        m2_full=m2_full,
        q2_full=q2_full,
        variance_shape=omega,
    )
