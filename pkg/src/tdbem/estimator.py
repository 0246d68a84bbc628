from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, validator

from tdbem.assembly import Solution
from tdbem.constants import SOBOLEV_S
from tdbem.datum import NeumannDatum
from tdbem.exceptions import QuadratureContractError
from tdbem.kernel import RESIDUAL, TWO_PI
from tdbem.mesh import BoxGrid, SpatialMesh, TimeMesh
from tdbem.quadrature import (
    QuadratureConfig,
    finite_part_inner,
    gauss_rule,
    graded_rule,
    integrate_lightcone,
)
from tdbem.utils import map_indexed

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

NODE_TOLERANCE = 1e-12
ON_MESH_TOLERANCE = 1e-10


class CoefficientPolicy(str, Enum):
    MAX = "max"
    PYTHAGOREAN = "pythagorean"
    H_ONLY = "h_only"
    DT_ONLY = "dt_only"


class IndicatorConfig(BaseModel):
    coefficient_policy: CoefficientPolicy = CoefficientPolicy.MAX
    sobolev_s: float = SOBOLEV_S

    class Config:
        frozen = True

    @validator("sobolev_s")
    def s_in_range(cls, value):
        if not 0.0 <= value <= 0.5:
            raise ValueError(f"sobolev_s must lie in [0, 1/2], got {value}")
        return value


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Box indicators eta[i, j] for interval i and element j, with their sums."""

    eta_box: FloatArray

    eta_space: FloatArray = field(init=False)
    eta_time: FloatArray = field(init=False)
    total: float = field(init=False)

    def __post_init__(self):
        eta = np.array(self.eta_box, dtype=float)
        if eta.ndim != 2:
            raise ValueError(f"eta_box must be 2D, got shape {eta.shape}")
        if np.any(eta < 0.0) or not np.all(np.isfinite(eta)):
            raise ValueError("indicators must be finite and non-negative")
        eta.setflags(write=False)
        object.__setattr__(self, "eta_box", eta)
        object.__setattr__(self, "eta_space", eta.sum(axis=0))
        object.__setattr__(self, "eta_time", eta.sum(axis=1))
        object.__setattr__(self, "total", float(eta.sum()))


def _knot_weights(sol: Solution) -> FloatArray:
    # w_m = alpha_m / dt_m - alpha_{m-1} / dt_{m-1}, one row per knot
    scaled = sol.coefficients / sol.time.steps[:, None]
    weights = np.zeros((sol.time.n_intervals + 1, sol.space.n_dofs))
    weights[:-1] += scaled
    weights[1:] -= scaled
    return weights


def _nodal_integrals(
    space: SpatialMesh, element: int, s: FloatArray, lags: FloatArray, cfg
) -> FloatArray:
    """
    Integrals of the residual kernel against every hat function, for the
    points ``s`` of ``element`` and every lag: shape (len(s), len(lags), M).
    """
    n_s, n_lag = len(s), len(lags)
    s_rep = np.repeat(s, n_lag)
    lag_rep = np.tile(lags, n_s)
    centers = space.points(element, s_rep)
    nodal = np.zeros((n_s, n_lag, space.n_dofs))
    for k in range(space.n_elements):
        dofs = space.element_dofs[k]
        if np.all(dofs < 0):
            continue
        q0, q1 = space.endpoints(k)
        if k == element:
            local = finite_part_inner(q0, q1, s_rep, lag_rep, RESIDUAL, cfg)
        else:
            local = integrate_lightcone(
                q0,
                q1,
                space.normals[k],
                centers,
                space.normals[element],
                lag_rep,
                RESIDUAL,
                cfg,
            )
        local = local.reshape(n_s, n_lag, 2)
        for a in (0, 1):
            if dofs[a] >= 0:
                nodal[:, :, dofs[a]] += local[:, :, a]
    return nodal


def eval_W_psih_batch(
    sol: Solution,
    element: int,
    s,
    times,
    cfg: QuadratureConfig | None = None,
) -> FloatArray:
    """
    W psi_h at the points ``s`` in (0, 1) of ``element`` for all ``times``.

    Lags t - t_m that agree to 13 significant digits are integrated once.

    :returns: array of shape (len(times), len(s))
    """
    cfg = cfg or QuadratureConfig()
    space, time = sol.space, sol.time
    s = np.atleast_1d(np.asarray(s, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any((s <= NODE_TOLERANCE) | (s >= 1.0 - NODE_TOLERANCE)):
        raise QuadratureContractError(
            "evaluation points must lie strictly inside the element"
        )

    lags = times[:, None] - time.knots[None, :]
    positive = lags > 0.0
    values = np.zeros((len(times), len(s)))
    if not np.any(positive):
        return values
    rounded = np.array([float(f"{lag:.12e}") for lag in lags[positive]])
    unique_lags, inverse = np.unique(rounded, return_inverse=True)

    nodal = _nodal_integrals(space, element, s, unique_lags, cfg)
    per_knot = nodal @ _knot_weights(sol).T  # (points, unique lags, knots)
    rows, knots = np.nonzero(positive)
    contributions = per_knot[:, inverse, knots]
    np.add.at(values, rows, contributions.T)
    return values / TWO_PI


def locate_point(space: SpatialMesh, x) -> Tuple[int, float]:
    """
    Element and arc parameter of a point on the mesh.

    This function raises a QuadratureContractError when ``x`` is a mesh node
    or does not lie on the mesh.
    """
    x = np.asarray(x, dtype=float)
    for k in range(space.n_elements):
        p0, p1 = space.endpoints(k)
        d = p1 - p0
        s = float((x - p0) @ d / (d @ d))
        gap = np.hypot(*(x - p0 - s * d))
        if gap > ON_MESH_TOLERANCE * space.lengths[k] or not 0.0 <= s <= 1.0:
            continue
        if s <= NODE_TOLERANCE or s >= 1.0 - NODE_TOLERANCE:
            raise QuadratureContractError(f"x={tuple(x)} is an element node")
        return k, s
    raise QuadratureContractError(f"x={tuple(x)} does not lie on the mesh")


def eval_W_psih(
    x, t: float, sol: Solution, cfg: QuadratureConfig | None = None
) -> float:
    """
    W psi_h at the point ``x`` of the boundary and time ``t``.

    This function raises a QuadratureContractError when ``x`` is a mesh node.
    """
    element, s = locate_point(sol.space, x)
    return float(eval_W_psih_batch(sol, element, [s], [t], cfg)[0, 0])


def _box_rules(time: TimeMesh, cfg: QuadratureConfig):
    # W psi_h has logarithmic behavior at the element nodes; the space rule
    # is the graded outer rule of the assembly
    s, ws = graded_rule(cfg.outer_order, cfg.outer_grading_levels)
    v, wt = gauss_rule(cfg.time_order)
    times = time.knots[:-1, None] + time.steps[:, None] * v
    return s, ws, times, wt


def _column_residual(
    sol: Solution, datum: NeumannDatum, element: int, cfg: QuadratureConfig
) -> FloatArray:
    # f - W psi_h at the box Gauss nodes of one element column: (N_T, q, S)
    space, time = sol.space, sol.time
    s, _, times, _ = _box_rules(time, cfg)
    flat_times = times.ravel()
    w_psi = eval_W_psih_batch(sol, element, s, flat_times, cfg)
    f = datum.evaluate(space, element, space.points(element, s), flat_times)
    return (f - w_psi).reshape(time.n_intervals, cfg.time_order, len(s))


def residual_norms(
    sol: Solution,
    datum: NeumannDatum,
    cfg: QuadratureConfig | None = None,
    threads: int | None = 1,
) -> FloatArray:
    """Squared residual norms of all boxes, shape (N_T, N_Gamma)."""
    cfg = cfg or QuadratureConfig()
    space, time = sol.space, sol.time
    _, ws, _, wt = _box_rules(time, cfg)
    measures = BoxGrid(space, time).measures()

    def column(element: int) -> FloatArray:
        residual = _column_residual(sol, datum, element, cfg)
        squares = np.einsum("iqs,q,s->i", residual**2, wt, ws)
        return squares * measures[:, element]

    columns = map_indexed(column, range(space.n_elements), threads)
    return np.stack(columns, axis=1)


def residual_norm_box(
    i: int,
    j: int,
    sol: Solution,
    datum: NeumannDatum,
    cfg: QuadratureConfig | None = None,
) -> float:
    cfg = cfg or QuadratureConfig()
    space, time = sol.space, sol.time
    s, ws, times, wt = _box_rules(time, cfg)
    w_psi = eval_W_psih_batch(sol, j, s, times[i], cfg)
    f = datum.evaluate(space, j, space.points(j, s), times[i])
    square = wt @ (f - w_psi) ** 2 @ ws
    return float(square * time.steps[i] * space.lengths[j])


def indicator_coefficients(
    space: SpatialMesh, time: TimeMesh, icfg: IndicatorConfig
) -> FloatArray:
    """Box size C[i, j] of the chosen policy raised to 2 - 2s."""
    dt, h = time.steps, space.lengths
    policy = icfg.coefficient_policy
    if policy == CoefficientPolicy.MAX:
        size = BoxGrid(space, time).diameters()
    elif policy == CoefficientPolicy.PYTHAGOREAN:
        size = np.hypot.outer(dt, h)
    elif policy == CoefficientPolicy.H_ONLY:
        size = np.broadcast_to(h, (len(dt), len(h)))
    else:
        size = np.broadcast_to(dt[:, None], (len(dt), len(h)))
    return size ** (2.0 - 2.0 * icfg.sobolev_s)


def indicators_from_residuals(
    squared_norms: FloatArray,
    space: SpatialMesh,
    time: TimeMesh,
    icfg: IndicatorConfig,
) -> IndicatorField:
    return IndicatorField(indicator_coefficients(space, time, icfg) * squared_norms)


def compute_indicators(
    sol: Solution,
    datum: NeumannDatum,
    icfg: IndicatorConfig | None = None,
    qcfg: QuadratureConfig | None = None,
    threads: int | None = 1,
) -> IndicatorField:
    icfg = icfg or IndicatorConfig()
    squared_norms = residual_norms(sol, datum, qcfg, threads)
    indicators = indicators_from_residuals(squared_norms, sol.space, sol.time, icfg)
    logger.debug(
        f"Indicators on {squared_norms.size} boxes: total={indicators.total:.6e}"
    )
    return indicators


def galerkin_defect(
    sol: Solution,
    datum: NeumannDatum,
    cfg: QuadratureConfig | None = None,
    threads: int | None = 1,
) -> FloatArray:
    """
    Pairing of the residual with every test function phi_j d/dt nu_i, using
    the box quadrature of the estimator; shape (N_T, M_Gamma).
    """
    cfg = cfg or QuadratureConfig()
    space = sol.space
    s, ws, _, wt = _box_rules(sol.time, cfg)
    shapes = np.stack([1.0 - s, s], axis=1) * ws[:, None]

    def column(element: int) -> FloatArray:
        residual = _column_residual(sol, datum, element, cfg)
        # d/dt nu_i = 1/dt_i cancels the time measure of the box
        return space.lengths[element] * np.einsum("iqs,q,sa->ia", residual, wt, shapes)

    columns = map_indexed(column, range(space.n_elements), threads)
    defect = np.zeros((sol.time.n_intervals, space.n_dofs))
    for element, local in enumerate(columns):
        for a, dof in enumerate(space.element_dofs[element]):
            if dof >= 0:
                defect[:, dof] += local[:, a]
    return defect


def write_indicators(indicators: IndicatorField, path: Path | str) -> None:
    n_t, n_gamma = indicators.eta_box.shape
    i, j = np.meshgrid(np.arange(n_t), np.arange(n_gamma), indexing="ij")
    table = np.column_stack([i.ravel(), j.ravel(), indicators.eta_box.ravel()])
    np.savetxt(path, table, fmt="%d %d %.12e")
