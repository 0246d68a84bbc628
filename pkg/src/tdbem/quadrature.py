from __future__ import annotations

import functools
import math
from typing import Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, validator

from tdbem.constants import (
    CONE_SHRINK,
    INNER_ORDER,
    MAX_GRADING_LEVELS,
    MIN_BREAK_GAP,
    OUTER_GRADING_LEVELS,
    OUTER_ORDER,
    TIME_ORDER,
)
from tdbem.exceptions import QuadratureContractError
from tdbem.kernel import KernelForm, cone_roots, lightcone_split

FloatArray = npt.NDArray[np.float64]

HALF_PI = 0.5 * math.pi


class QuadratureConfig(BaseModel):
    outer_order: int = OUTER_ORDER
    inner_order: int = INNER_ORDER
    time_order: int = TIME_ORDER
    cone_shrink: float = CONE_SHRINK
    outer_grading_levels: int = OUTER_GRADING_LEVELS

    class Config:
        frozen = True

    @validator("outer_order", "inner_order", "time_order")
    def order_at_least_two(cls, value):
        if value < 2:
            raise ValueError(f"quadrature orders must be at least 2, got {value}")
        return value

    @validator("cone_shrink")
    def small_guard(cls, value):
        if not 0.0 <= value < 1e-3:
            raise ValueError(f"cone_shrink must lie in [0, 1e-3), got {value}")
        return value

    @validator("outer_grading_levels")
    def non_negative_levels(cls, value):
        if value < 0:
            raise ValueError("outer_grading_levels cannot be negative")
        return value


@functools.lru_cache(maxsize=None)
def gauss_rule(order: int) -> Tuple[FloatArray, FloatArray]:
    """
    Gauss-Legendre nodes and weights mapped to [0, 1].

    This function raises a ValueError when ``order`` is below 1.
    """
    if order < 1:
        raise ValueError(f"Gauss order must be positive, got {order}")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def cone_adapted_nodes(
    lo: FloatArray,
    hi: FloatArray,
    lower_cone: FloatArray,
    upper_cone: FloatArray,
    order: int,
) -> Tuple[FloatArray, FloatArray]:
    """
    Gauss nodes on [lo, hi] with a sine substitution at the ends where the
    integrand behaves like (distance to the end)^(-1/2).

    All inputs broadcast together; outputs gain a trailing axis of length
    ``order``.
    """
    v, w = gauss_rule(order)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    lower = np.asarray(lower_cone, dtype=bool)[..., None]
    upper = np.asarray(upper_cone, dtype=bool)[..., None]
    width = hi - lo

    s_plain, ds_plain = lo + width * v, width * w
    s_upper = lo + width * np.sin(HALF_PI * v)
    ds_upper = width * HALF_PI * np.cos(HALF_PI * v) * w
    s_lower = lo + width * (1.0 - np.cos(HALF_PI * v))
    ds_lower = width * HALF_PI * np.sin(HALF_PI * v) * w
    phase = math.pi * (v - 0.5)
    s_both = lo + 0.5 * width * (1.0 + np.sin(phase))
    ds_both = 0.5 * width * math.pi * np.cos(phase) * w

    conditions = [lower & upper, upper, lower]
    s = np.select(conditions, [s_both, s_upper, s_lower], s_plain)
    ds = np.select(conditions, [ds_both, ds_upper, ds_lower], ds_plain)
    return s, ds


def _grading_breaks(
    lo: FloatArray, hi: FloatArray, closest: FloatArray, rho: FloatArray
) -> FloatArray:
    # breakpoints at closest +- rho 2^k, k = 0..levels-1, clipped into [lo, hi]
    levels = np.ceil(np.log2(1.0 / rho.min())) + 1
    levels = int(np.clip(levels, 1, MAX_GRADING_LEVELS))
    offsets = rho[:, None] * 2.0 ** np.arange(levels)
    breaks = np.concatenate(
        [
            lo[:, None],
            hi[:, None],
            closest[:, None],
            closest[:, None] - offsets,
            closest[:, None] + offsets,
        ],
        axis=1,
    )
    return np.sort(np.clip(breaks, lo[:, None], hi[:, None]), axis=1)


def integrate_lightcone(
    p0,
    p1,
    normal_y,
    centers,
    normal_x,
    lag,
    kernel: KernelForm,
    cfg: QuadratureConfig,
    graded: bool | None = None,
) -> FloatArray:
    """
    Integrals of kernel(x, y, lag) N_a(y) over the segment [p0, p1] for the
    two linear shape functions N_0 = 1 - s and N_1 = s.

    Vectorized over field points ``centers`` (P, 2) and lags (P,). Only the
    part of the segment inside the light cone is integrated; cone ends get
    the square-root absorbing substitution. Segments closer to the field
    point than their length are split geometrically toward the closest
    point, unless ``graded`` says otherwise.

    This function raises a QuadratureContractError when a field point lies
    on the segment.

    :returns: array of shape (P, 2)
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    lag = np.broadcast_to(np.asarray(lag, dtype=float), centers.shape[:1])
    d = p1 - p0
    length = math.hypot(*d)

    w = centers - p0
    closest = np.clip((w @ d) / length**2, 0.0, 1.0)
    gap = centers - (p0 + closest[:, None] * d)
    rho = np.hypot(gap[:, 0], gap[:, 1]) / length
    if np.any(rho <= 1e-14):
        raise QuadratureContractError(
            "field point on the segment, use finite_part_inner instead"
        )

    s_minus, s_plus, real = cone_roots(p0, p1, centers, lag)
    lo = np.clip(s_minus, 0.0, 1.0)
    hi = np.clip(s_plus, 0.0, 1.0)
    nonempty = real & (hi > lo)
    lower_cone = nonempty & (s_minus > 0.0)
    upper_cone = nonempty & (s_plus < 1.0)
    width = hi - lo
    lo = np.where(lower_cone, lo + cfg.cone_shrink * width, lo)
    hi = np.where(upper_cone, hi - cfg.cone_shrink * width, hi)
    hi = np.where(nonempty, hi, lo)

    if graded is None:
        graded = bool(np.any(rho[nonempty] < 1.0))
    if graded and np.any(nonempty):
        breaks = _grading_breaks(lo, hi, closest, np.maximum(rho, 1e-14))
    else:
        breaks = np.stack([lo, hi], axis=1)

    sub_lo, sub_hi = breaks[:, :-1], breaks[:, 1:]
    lower_flag = lower_cone[:, None] & (sub_lo == lo[:, None])
    upper_flag = upper_cone[:, None] & (sub_hi == hi[:, None])
    s, ds = cone_adapted_nodes(
        sub_lo, sub_hi, lower_flag, upper_flag, cfg.inner_order
    )

    y = p0 + s[..., None] * d
    values = kernel.values(
        centers[:, None, None, :], y, normal_x, normal_y, lag[:, None, None]
    )
    weights = np.where(ds > 0.0, values * ds, 0.0) * length
    integrals = np.stack(
        [
            np.sum(weights * (1.0 - s), axis=(1, 2)),
            np.sum(weights * s, axis=(1, 2)),
        ],
        axis=-1,
    )
    return np.where(nonempty[:, None], integrals, 0.0)


def finite_part_inner(
    p0, p1, s_x, lag, kernel: KernelForm, cfg: QuadratureConfig
) -> FloatArray:
    """
    Hadamard finite part of the integral of kernel(x, y, lag) N_a(y) over
    the straight segment [p0, p1] that contains x = p0 + s_x (p1 - p0).

    The integrand is F(u) N_a(y) / u^2 in the signed arc distance u. With
    a2 = F(0) N_a(x) and a1 = F(0) N_a' the singular part a2 / u^2 + a1 / u
    is integrated in closed form over the part of the segment inside the
    light cone, [-left, right]:

        f.p. int u^-2 du = -1/left - 1/right,  p.v. int u^-1 du = log(right/left)

    and the remainder (F(u) - F(0)) / u^2 N_a(y) by Gauss on both sides with
    u = extent sin^2(theta), which smooths the logarithmic behavior at u = 0
    and the square-root behavior at the cone.

    Vectorized over ``s_x`` (P,) and lags (P,). Non-positive lags give 0.

    This function raises a QuadratureContractError when x is not strictly
    inside the segment.

    :returns: array of shape (P, 2)
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    s_x = np.atleast_1d(np.asarray(s_x, dtype=float))
    lag = np.broadcast_to(np.asarray(lag, dtype=float), s_x.shape)
    if np.any((s_x <= 0.0) | (s_x >= 1.0)):
        raise QuadratureContractError("x must lie strictly inside the segment")
    length = math.hypot(*(p1 - p0))

    active = lag > 0.0
    safe_lag = np.where(active, lag, 1.0)
    left = np.minimum(s_x * length, safe_lag)
    right = np.minimum((1.0 - s_x) * length, safe_lag)

    shape_x = np.stack([1.0 - s_x, s_x], axis=-1)
    slope = np.array([-1.0, 1.0]) / length
    f0 = kernel.coincident_limit(safe_lag)
    fp_inverse_square = -1.0 / left - 1.0 / right
    pv_inverse = np.log(right / left)
    singular = f0[:, None] * (
        shape_x * fp_inverse_square[:, None] + slope * pv_inverse[:, None]
    )

    v, w = gauss_rule(cfg.inner_order)
    theta = HALF_PI * v
    remainder = np.zeros_like(singular)
    for side, extent in ((-1.0, left), (1.0, right)):
        extent = np.where(extent >= safe_lag, extent * (1.0 - cfg.cone_shrink), extent)
        u = extent[:, None] * np.sin(theta) ** 2
        du = extent[:, None] * np.sin(2.0 * theta) * HALF_PI * w
        s = s_x[:, None] + side * u / length
        excess = kernel.coincident_excess(u, safe_lag[:, None]) * du
        remainder[:, 0] += np.sum(excess * (1.0 - s), axis=1)
        remainder[:, 1] += np.sum(excess * s, axis=1)

    return np.where(active[:, None], singular + remainder, 0.0)


def _merged_breaks(breaks) -> FloatArray:
    # drops breakpoints within MIN_BREAK_GAP of 0, 1 or the previous one kept
    kept = [0.0]
    for b in np.unique(np.asarray(breaks, dtype=float)):
        if b - kept[-1] > MIN_BREAK_GAP and b < 1.0 - MIN_BREAK_GAP:
            kept.append(float(b))
    kept.append(1.0)
    return np.asarray(kept)


def _gauss_on_breaks(breaks, order: int) -> Tuple[FloatArray, FloatArray]:
    v, w = gauss_rule(order)
    breaks = _merged_breaks(breaks)
    lo, width = breaks[:-1], np.diff(breaks)
    return (lo[:, None] + width[:, None] * v).ravel(), (width[:, None] * w).ravel()


def outer_rule_far(
    p0, p1, q0, q1, lag: float, order: int
) -> Tuple[FloatArray, FloatArray]:
    """
    Outer Gauss rule on [p0, p1] split where the light circle of radius
    ``lag`` around an end of the inner element [q0, q1] crosses it.
    """
    breaks = [0.0, 1.0]
    for q in (q0, q1):
        breaks += [piece.s0 for piece in lightcone_split(p0, p1, q, lag)[1:]]
    return _gauss_on_breaks(breaks, order)


def _graded_breaks(levels: int) -> list:
    graded = 0.5 ** np.arange(1, levels + 1)
    return [0.0, 1.0, *graded, *(1.0 - graded)]


def graded_rule(order: int, levels: int) -> Tuple[FloatArray, FloatArray]:
    """
    Composite Gauss rule on [0, 1] on cells halving toward both ends, for
    integrands with logarithmic behavior at the element nodes.
    """
    return _gauss_on_breaks(_graded_breaks(levels), order)


def outer_rule_near(
    length: float, lag: float, order: int, levels: int
) -> Tuple[FloatArray, FloatArray]:
    """
    Outer Gauss rule on an element shared by its coincident and touching
    pairs: graded toward both ends and split at the element's own light-cone
    kinks. It depends on the element length and the lag only.
    """
    breaks = _graded_breaks(levels)
    kink = lag / length
    if MIN_BREAK_GAP < kink < 1.0 - MIN_BREAK_GAP:
        breaks += [kink, 1.0 - kink]
    return _gauss_on_breaks(breaks, order)
