from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import numpy.typing as npt

from tdbem.exceptions import KernelDomainError

FloatArray = npt.NDArray[np.float64]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class KernelPoint:
    """Field point x and source point y with their unit normals."""

    x: Tuple[float, float]
    y: Tuple[float, float]
    n_x: Tuple[float, float]
    n_y: Tuple[float, float]

    def __post_init__(self):
        for name in ("n_x", "n_y"):
            normal = getattr(self, name)
            if abs(math.hypot(*normal) - 1.0) > 1e-12:
                raise KernelDomainError(f"{name}={normal} is not a unit vector")

    @functools.cached_property
    def r(self) -> float:
        return math.hypot(self.x[0] - self.y[0], self.x[1] - self.y[1])

    @functools.cached_property
    def normal_products(self) -> Tuple[float, float]:
        """((x-y).n_x)((x-y).n_y) / r^2 and n_x.n_y"""
        dx, dy = self.x[0] - self.y[0], self.x[1] - self.y[1]
        a = dx * self.n_x[0] + dy * self.n_x[1]
        b = dx * self.n_y[0] + dy * self.n_y[1]
        nn = self.n_x[0] * self.n_y[0] + self.n_x[1] * self.n_y[1]
        return a * b / self.r**2, nn


@dataclass(frozen=True)
class TimeLag:
    """Time difference with the steps normalizing the assembly kernel."""

    delta: float
    dt_test: float = 1.0
    dt_trial: float = 1.0

    def __post_init__(self):
        if self.dt_test <= 0.0 or self.dt_trial <= 0.0:
            raise KernelDomainError(
                f"normalization steps must be positive, got "
                f"{self.dt_test} and {self.dt_trial}"
            )


def kernel_D(p: KernelPoint, lag: TimeLag) -> float:
    """
    Doubly time-integrated hypersingular kernel used for the matrix entries,
    at a single point pair. Assembly evaluates the same closed form through
    the vectorized hypersingular_values; this form is the scalar reference.

    The Heaviside gate is the caller's business: evaluating on or inside
    the light cone is a contract violation.

    This function raises a KernelDomainError when r = 0 or lag <= r.
    """
    r = p.r
    if r == 0.0:
        raise KernelDomainError("r = 0 must go through finite-part quadrature")
    if lag.delta <= r:
        raise KernelDomainError(f"lag {lag.delta} does not exceed r={r}")
    ab, nn = p.normal_products
    root = math.sqrt((lag.delta - r) * (lag.delta + r))
    q = lag.delta * root / r**2
    value = ab * q + 0.5 * nn * (math.acosh(lag.delta / r) - q)
    return value / (TWO_PI * lag.dt_test * lag.dt_trial)


def kernel_Dtilde(p: KernelPoint, lag: float) -> float:
    """
    Once time-integrated hypersingular kernel used for the residual, at a
    single point pair; the scalar reference of residual_values.

    Returns 0 on and outside the light cone; integration routines never
    evaluate it there because they split segments at the cone.

    This function raises a KernelDomainError when r = 0.
    """
    r = p.r
    if r == 0.0:
        raise KernelDomainError("r = 0 must go through finite-part quadrature")
    if lag <= r:
        return 0.0
    ab, nn = p.normal_products
    root = math.sqrt((lag - r) * (lag + r))
    f = (ab - nn) * root + lag**2 * ab / root
    return f / r**2


def _geometry(x, y, n_x, n_y):
    d = np.asarray(x) - np.asarray(y)
    r2 = np.einsum("...k,...k->...", d, d)
    a = np.einsum("...k,...k->...", d, n_x)
    b = np.einsum("...k,...k->...", d, n_y)
    nn = np.einsum("...k,...k->...", np.broadcast_to(n_x, d.shape), n_y)
    return r2, a * b / r2, nn


def hypersingular_values(x, y, n_x, n_y, lag) -> FloatArray:
    """
    Bracket of the assembly kernel without the 1/(2 pi dt dt) prefactor.

    Vectorized over broadcastable point arrays; points on or outside the
    light cone give 0.
    """
    r2, ab, nn = _geometry(x, y, n_x, n_y)
    r = np.sqrt(r2)
    lag = np.asarray(lag, dtype=float)
    inside = lag > r
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.sqrt(np.maximum((lag - r) * (lag + r), 0.0))
        q = lag * root / r2
        value = ab * q + 0.5 * nn * (np.arccosh(np.maximum(lag / r, 1.0)) - q)
    return np.where(inside, value, 0.0)


def residual_values(x, y, n_x, n_y, lag) -> FloatArray:
    """Vectorized kernel_Dtilde; points on or outside the light cone give 0."""
    r2, ab, nn = _geometry(x, y, n_x, n_y)
    r = np.sqrt(r2)
    lag = np.asarray(lag, dtype=float)
    inside = lag > r
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.sqrt(np.maximum((lag - r) * (lag + r), 0.0))
        f = (ab - nn) * root + lag**2 * ab / root
        value = f / r2
    return np.where(inside, value, 0.0)


@dataclass(frozen=True)
class KernelForm:
    """
    A kernel written as F(x, y) / r^2 together with its Taylor data on a
    straight element through x, where n_x = n_y and (x - y).n_x = 0.

    ``coincident_limit`` is F at y = x and ``coincident_excess`` is
    (F(u) - F(0)) / u^2 for the signed distance u along the element.
    """

    name: str

    def values(self, x, y, n_x, n_y, lag) -> FloatArray:
        if self.name == "hypersingular":
            return hypersingular_values(x, y, n_x, n_y, lag)
        return residual_values(x, y, n_x, n_y, lag)

    def coincident_limit(self, lag) -> FloatArray:
        lag = np.asarray(lag, dtype=float)
        if self.name == "hypersingular":
            return -0.5 * lag**2
        return -lag

    def coincident_excess(self, u, lag) -> FloatArray:
        u = np.abs(np.asarray(u, dtype=float))
        lag = np.asarray(lag, dtype=float)
        root = np.sqrt(np.maximum((lag - u) * (lag + u), 0.0))
        if self.name == "hypersingular":
            with np.errstate(divide="ignore"):
                return 0.5 * (np.arccosh(lag / u) + lag / (lag + root))
        return 1.0 / (lag + root)


HYPERSINGULAR = KernelForm("hypersingular")
RESIDUAL = KernelForm("residual")


@dataclass(frozen=True)
class SubSegment:
    s0: float
    s1: float
    inside: bool


def cone_roots(p0, p1, centers, radius) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """
    Real roots s_minus <= s_plus of |center - y(s)|^2 = radius^2 on the line
    y(s) = p0 + s (p1 - p0), vectorized over centers and radii.

    Returns the roots and a mask of centers with two distinct real roots.
    """
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    w = np.asarray(centers, dtype=float) - p0
    radius = np.asarray(radius, dtype=float)
    length2 = d @ d
    proj = w @ d
    dist2 = np.einsum("...k,...k->...", w, w)
    disc = proj**2 - length2 * (dist2 - radius**2)
    real = disc > 0.0
    root = np.sqrt(np.where(real, disc, 0.0))
    return (proj - root) / length2, (proj + root) / length2, real


def lightcone_split(p0, p1, center, radius: float) -> List[SubSegment]:
    """
    Partition of the segment [p0, p1] by the circle of ``radius`` around
    ``center``, in parameter order, each piece tagged inside or outside.

    A tangent circle (double root) adds no breakpoint.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    center = np.asarray(center, dtype=float)
    s_minus, s_plus, real = cone_roots(p0, p1, center, radius)
    breaks = [0.0]
    if real:
        breaks += [float(s) for s in (s_minus, s_plus) if 0.0 < s < 1.0]
    breaks.append(1.0)

    pieces = []
    for s0, s1 in zip(breaks[:-1], breaks[1:]):
        middle = p0 + 0.5 * (s0 + s1) * (p1 - p0)
        inside = bool(np.hypot(*(center - middle)) < radius)
        pieces.append(SubSegment(s0, s1, inside))
    return pieces
