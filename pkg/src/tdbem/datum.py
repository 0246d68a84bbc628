from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import numpy.typing as npt
from scipy.special import roots_jacobi

from tdbem.constants import DATUM_TIME_ORDER
from tdbem.exceptions import UnknownPresetError
from tdbem.mesh import SpatialMesh
from tdbem.quadrature import gauss_rule

FloatArray = npt.NDArray[np.float64]

SpatialFactor = Callable[[SpatialMesh, int, FloatArray], FloatArray]
TemporalFactor = Callable[[FloatArray], FloatArray]


@dataclass(frozen=True)
class NeumannDatum:
    """
    Separable Neumann datum f(x, t) = scale * F(x) g(t).

    ``singular_exponent`` and ``smooth_factor`` describe g near t = 0 as
    t**exponent * smooth_factor(t); ``breakpoints`` are the times where g
    is not smooth.
    """

    name: str
    spatial: SpatialFactor
    temporal: TemporalFactor
    singular_exponent: Optional[float] = None
    smooth_factor: Optional[TemporalFactor] = None
    breakpoints: Tuple[float, ...] = ()
    scale: float = 1.0

    def scaled(self, factor: float) -> NeumannDatum:
        return dataclasses.replace(self, scale=self.scale * factor)

    def temporal_values(self, times) -> FloatArray:
        return self.scale * self.temporal(np.asarray(times, dtype=float))

    def spatial_values(self, mesh: SpatialMesh, element: int, points) -> FloatArray:
        return self.spatial(mesh, element, np.atleast_2d(points))

    def evaluate(self, mesh: SpatialMesh, element: int, points, times) -> FloatArray:
        """f on the grid ``times`` x ``points``, shape (len(times), len(points))"""
        return np.multiply.outer(
            self.temporal_values(times), self.spatial_values(mesh, element, points)
        )

    def time_average(self, t0: float, t1: float) -> float:
        """
        (1 / (t1 - t0)) times the integral of scale * g over [t0, t1].

        Pieces starting at a singular t = 0 use Gauss-Jacobi with the
        algebraic weight, the others composite Gauss-Legendre split at the
        breakpoints.
        """
        breaks = [t0, *(b for b in self.breakpoints if t0 < b < t1), t1]
        total = 0.0
        for a, b in zip(breaks[:-1], breaks[1:]):
            if a == 0.0 and self.singular_exponent is not None:
                total += self._jacobi_piece(b)
            else:
                nodes, weights = gauss_rule(DATUM_TIME_ORDER)
                times = a + (b - a) * nodes
                total += (b - a) * float(weights @ self.temporal(times))
        return self.scale * total / (t1 - t0)

    def _jacobi_piece(self, end: float) -> float:
        exponent = self.singular_exponent
        nodes, weights = roots_jacobi(DATUM_TIME_ORDER, 0.0, exponent)
        times = 0.5 * end * (nodes + 1.0)
        return (0.5 * end) ** (exponent + 1.0) * float(
            weights @ self.smooth_factor(times)
        )

    def spatial_moments(self, mesh: SpatialMesh, order: int) -> FloatArray:
        """Integral of F times every spatial hat function, one value per DoF."""
        s, w = gauss_rule(order)
        moments = np.zeros(mesh.n_dofs)
        for k in range(mesh.n_elements):
            values = self.spatial_values(mesh, k, mesh.points(k, s)) * w
            local = mesh.lengths[k] * np.array(
                [values @ (1.0 - s), values @ s]
            )
            for dof, value in zip(mesh.element_dofs[k], local):
                if dof >= 0:
                    moments[dof] += value
        return moments


DATUM_BUILDERS: Dict[str, Callable[[], NeumannDatum]] = dict()


def register_datum(name: str) -> Callable:
    def wrapper(func: Callable[[], NeumannDatum]) -> Callable[[], NeumannDatum]:
        DATUM_BUILDERS[name] = func
        return func

    return wrapper


def _ones(mesh: SpatialMesh, element: int, points: FloatArray) -> FloatArray:
    return np.ones(len(points))


def _step(times: FloatArray) -> FloatArray:
    return np.where(times >= 0.0, 1.0, 0.0)


@register_datum("heaviside")
def _heaviside() -> NeumannDatum:
    return NeumannDatum("heaviside", _ones, _step)


@register_datum("normal_x1")
def _normal_x1() -> NeumannDatum:
    def first_normal_component(mesh, element, points):
        return np.full(len(points), mesh.normals[element, 0])

    return NeumannDatum("normal_x1", first_normal_component, _step)


@register_datum("triangle_sides")
def _triangle_sides() -> NeumannDatum:
    ramp_end = 1.0 / 8.0

    def side_indicator(mesh, element, points):
        # +1 on S1, -1 on S2, 0 on the base S0
        tag = mesh.segment_tags[element]
        sign = {1: 1.0, 2: -1.0}.get(int(tag), 0.0)
        return np.full(len(points), sign)

    def smooth_start(times):
        return np.where(times < ramp_end, np.sin(4.0 * math.pi * times) ** 2, 1.0)

    return NeumannDatum(
        "triangle_sides", side_indicator, smooth_start, breakpoints=(ramp_end,)
    )


@register_datum("circle_pulse")
def _circle_pulse() -> NeumannDatum:
    exponent = -0.27

    def pulse(times):
        return (5.0 * times) ** exponent * np.exp(-5.0 * times)

    def cofactor(times):
        return 5.0**exponent * np.exp(-5.0 * times)

    return NeumannDatum(
        "circle_pulse",
        _ones,
        pulse,
        singular_exponent=exponent,
        smooth_factor=cofactor,
    )


def get_datum(name: str) -> NeumannDatum:
    """
    This function raises an UnknownPresetError when ``name`` is not a
    registered datum.
    """
    if name not in DATUM_BUILDERS:
        raise UnknownPresetError(
            f"Datum {name} not in data list: {sorted(DATUM_BUILDERS)}"
        )
    return DATUM_BUILDERS[name]()
