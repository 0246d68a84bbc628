from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Callable, Dict, Iterable, Tuple

import numpy as np
import numpy.typing as npt

from tdbem.constants import (
    ANGULAR_HALF_BASE,
    APEX_HEIGHT,
    CIRCLE_RADIUS,
    CRACK_HALF_LENGTH,
    DT_MIN,
    FLOAT_FORMAT,
    H_MIN,
)
from tdbem.exceptions import IncompatibleMeshError, MeshFloorError, UnknownPresetError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


class Topology(str, Enum):
    OPEN_ARC = "open_arc"
    CLOSED_CURVE = "closed_curve"


class DofStatus(IntEnum):
    UNCHANGED = 0
    MODIFIED = 1
    NEW = 2


@dataclass(frozen=True, eq=False)
class SpatialMesh:
    """
    Chain of straight segments on an open arc or a closed curve.

    Nodes are stored in chain order, so element ``k`` joins node ``k`` and
    node ``k + 1`` (wrapping around on closed curves). The normal of an
    element is ``normal_side`` times the tangent rotated by +90 degrees;
    closed curves run counter-clockwise with ``normal_side = -1`` so that the
    normals point outward.
    """

    nodes: FloatArray
    topology: Topology
    normal_side: float = 1.0
    geometry_tag: str | None = None
    segment_tags: IntArray | None = None

    elements: IntArray = field(init=False)
    lengths: FloatArray = field(init=False)
    tangents: FloatArray = field(init=False)
    normals: FloatArray = field(init=False)
    dof_map: IntArray = field(init=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise IncompatibleMeshError(
                f"nodes must be an (n, 2) array, got shape {nodes.shape}"
            )
        n_nodes = len(nodes)
        closed = self.topology == Topology.CLOSED_CURVE
        n_elements = n_nodes if closed else n_nodes - 1
        if n_elements < (3 if closed else 1):
            raise IncompatibleMeshError(
                f"{n_nodes} nodes do not form a {self.topology.value} mesh"
            )

        starts = np.arange(n_elements)
        elements = np.stack([starts, (starts + 1) % n_nodes], axis=1)
        chords = nodes[elements[:, 1]] - nodes[elements[:, 0]]
        lengths = np.hypot(chords[:, 0], chords[:, 1])
        if np.any(lengths <= 0.0):
            raise IncompatibleMeshError("every element must have positive length")
        tangents = chords / lengths[:, None]
        normals = self.normal_side * np.stack([-tangents[:, 1], tangents[:, 0]], 1)

        if closed:
            dof_map = np.arange(n_nodes)
        else:
            dof_map = np.full(n_nodes, -1)
            dof_map[1:-1] = np.arange(n_nodes - 2)

        tags = self.segment_tags
        tags = np.zeros(n_elements, dtype=int) if tags is None else np.asarray(tags)
        if tags.shape != (n_elements,):
            raise IncompatibleMeshError("one segment tag per element is required")

        for name, value in (
            ("nodes", nodes),
            ("segment_tags", tags.astype(int)),
            ("elements", elements),
            ("lengths", lengths),
            ("tangents", tangents),
            ("normals", normals),
            ("dof_map", dof_map),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def closed(self) -> bool:
        return self.topology == Topology.CLOSED_CURVE

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return int(np.count_nonzero(self.dof_map >= 0))

    @functools.cached_property
    def element_dofs(self) -> IntArray:
        """DoF index of both local nodes of every element, -1 at crack tips."""
        return self.dof_map[self.elements]

    def endpoints(self, k: int) -> Tuple[FloatArray, FloatArray]:
        a, b = self.elements[k]
        return self.nodes[a], self.nodes[b]

    def points(self, k: int, s: FloatArray) -> FloatArray:
        """Points at arc parameters ``s`` in [0, 1] along element ``k``."""
        p0, p1 = self.endpoints(k)
        return p0 + np.multiply.outer(s, p1 - p0)

    def total_length(self) -> float:
        return float(self.lengths.sum())

    def with_nodes(self, nodes: FloatArray, segment_tags: IntArray) -> SpatialMesh:
        return SpatialMesh(
            nodes=nodes,
            topology=self.topology,
            normal_side=self.normal_side,
            geometry_tag=self.geometry_tag,
            segment_tags=segment_tags,
        )


@dataclass(frozen=True, eq=False)
class SpatialProvenance:
    """Relation between a spatial mesh and its bisection."""

    status: IntArray  # DofStatus per DoF of the refined mesh
    old_to_new: IntArray  # refined DoF index of every old DoF
    element_children: Tuple[Tuple[int, ...], ...]
    n_old_dofs: int

    @property
    def new_dofs(self) -> IntArray:
        return np.flatnonzero(self.status == DofStatus.NEW)

    @property
    def modified_dofs(self) -> IntArray:
        return np.flatnonzero(self.status == DofStatus.MODIFIED)

    @property
    def unchanged_dofs(self) -> IntArray:
        return np.flatnonzero(self.status == DofStatus.UNCHANGED)

    @property
    def changed_dofs(self) -> IntArray:
        return np.flatnonzero(self.status != DofStatus.UNCHANGED)

    @property
    def is_identity(self) -> bool:
        return not np.any(self.status != DofStatus.UNCHANGED)

    def unchanged_pairs(self) -> Tuple[IntArray, IntArray]:
        """Old and new indices of the DoFs whose hat function is untouched."""
        new = self.unchanged_dofs
        inverse = np.full(len(self.status), -1)
        inverse[self.old_to_new] = np.arange(self.n_old_dofs)
        return inverse[new], new


@dataclass(frozen=True, eq=False)
class TimeMesh:
    knots: FloatArray

    steps: FloatArray = field(init=False)

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        if knots.ndim != 1 or len(knots) < 2:
            raise IncompatibleMeshError("a time mesh needs at least two knots")
        if knots[0] != 0.0:
            raise IncompatibleMeshError(f"time mesh must start at 0, got {knots[0]}")
        steps = np.diff(knots)
        if np.any(steps <= 0.0):
            raise IncompatibleMeshError("time knots must be strictly increasing")
        knots.setflags(write=False)
        steps.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "steps", steps)

    @classmethod
    def uniform(cls, final_time: float, n_intervals: int) -> TimeMesh:
        if n_intervals < 1:
            raise IncompatibleMeshError(
                f"n_intervals must be positive, got {n_intervals}"
            )
        return cls(np.linspace(0.0, final_time, n_intervals + 1))

    @property
    def n_intervals(self) -> int:
        return len(self.steps)

    @property
    def final_time(self) -> float:
        return float(self.knots[-1])

    def is_uniform(self, rtol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.steps - self.steps[0]) <= rtol * self.steps[0]))


@dataclass(frozen=True, eq=False)
class TimeProvenance:
    status: IntArray  # DofStatus per interval of the refined mesh
    old_to_new: IntArray  # refined index of every unsplit old interval, -1 if split
    interval_children: Tuple[Tuple[int, ...], ...]

    @property
    def is_identity(self) -> bool:
        return not np.any(self.status != DofStatus.UNCHANGED)

    @property
    def new_intervals(self) -> IntArray:
        return np.flatnonzero(self.status != DofStatus.UNCHANGED)


@dataclass(frozen=True, eq=False)
class BoxGrid:
    """Tensor-product boxes I_i x Gamma_j, addressed by (i, j)."""

    space: SpatialMesh
    time: TimeMesh

    @property
    def shape(self) -> Tuple[int, int]:
        return self.time.n_intervals, self.space.n_elements

    @property
    def n_boxes(self) -> int:
        return self.time.n_intervals * self.space.n_elements

    def measures(self) -> FloatArray:
        return np.outer(self.time.steps, self.space.lengths)

    def diameters(self) -> FloatArray:
        return np.maximum.outer(self.time.steps, self.space.lengths)


GEOMETRY_BUILDERS: Dict[str, Callable[[int], SpatialMesh]] = dict()


def register_geometry(name: str) -> Callable:
    """Adds the decorated builder to the geometry registry under ``name``."""

    def wrapper(func: Callable[[int], SpatialMesh]) -> Callable[[int], SpatialMesh]:
        setattr(func, "_geometry", name)
        GEOMETRY_BUILDERS[name] = func
        return func

    return wrapper


def _polyline(
    corners: Iterable[Tuple[float, float]], per_side: int, closed: bool
) -> Tuple[FloatArray, IntArray]:
    corners = np.asarray(list(corners), dtype=float)
    pieces = len(corners) if closed else len(corners) - 1
    nodes, tags = [], []
    for piece in range(pieces):
        start, end = corners[piece], corners[(piece + 1) % len(corners)]
        s = np.arange(per_side) / per_side
        nodes.append(start + np.outer(s, end - start))
        tags.append(np.full(per_side, piece))
    if not closed:
        nodes.append(corners[-1:])
    return np.concatenate(nodes), np.concatenate(tags)


@register_geometry("straight_crack")
def _straight_crack(n_elements: int) -> SpatialMesh:
    corners = [(-CRACK_HALF_LENGTH, 0.0), (CRACK_HALF_LENGTH, 0.0)]
    nodes, tags = _polyline(corners, n_elements, closed=False)
    return SpatialMesh(nodes, Topology.OPEN_ARC, 1.0, "straight_crack", tags)


@register_geometry("angular_crack")
def _angular_crack(n_elements: int) -> SpatialMesh:
    if n_elements % 2:
        raise IncompatibleMeshError(
            f"angular_crack needs an even number of elements, got {n_elements}"
        )
    corners = [(-ANGULAR_HALF_BASE, 0.0), (0.0, APEX_HEIGHT), (ANGULAR_HALF_BASE, 0.0)]
    nodes, tags = _polyline(corners, n_elements // 2, closed=False)
    # S1 is the rising side, S2 the falling one
    return SpatialMesh(nodes, Topology.OPEN_ARC, 1.0, "angular_crack", tags + 1)


@register_geometry("equilateral_triangle")
def _equilateral_triangle(n_elements: int) -> SpatialMesh:
    if n_elements % 3:
        raise IncompatibleMeshError(
            f"equilateral_triangle needs a multiple of 3 elements, got {n_elements}"
        )
    # S0 base, S1 right side, S2 left side
    corners = [(-ANGULAR_HALF_BASE, 0.0), (ANGULAR_HALF_BASE, 0.0), (0.0, APEX_HEIGHT)]
    nodes, tags = _polyline(corners, n_elements // 3, closed=True)
    return SpatialMesh(
        nodes, Topology.CLOSED_CURVE, -1.0, "equilateral_triangle", tags
    )


@register_geometry("circle")
def _circle(n_elements: int) -> SpatialMesh:
    if n_elements < 3:
        raise IncompatibleMeshError(f"a circle needs 3 elements, got {n_elements}")
    angles = 2.0 * np.pi * np.arange(n_elements) / n_elements
    nodes = CIRCLE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return SpatialMesh(nodes, Topology.CLOSED_CURVE, -1.0, "circle")


def build_geometry(preset: str, n_elements: int) -> SpatialMesh:
    """
    Uniform mesh of a registered geometry preset.

    This function raises an UnknownPresetError when the preset is not
    registered and an IncompatibleMeshError when ``n_elements`` does not fit
    its segment structure.
    """
    if preset not in GEOMETRY_BUILDERS:
        raise UnknownPresetError(
            f"Geometry {preset} not in presets list: {sorted(GEOMETRY_BUILDERS)}"
        )
    if n_elements < 1:
        raise IncompatibleMeshError(f"n_elements must be positive, got {n_elements}")
    return GEOMETRY_BUILDERS[preset](int(n_elements))


def _validated_marks(marked: Iterable[int], size: int, what: str) -> list[int]:
    marks = sorted({int(k) for k in marked})
    if marks and (marks[0] < 0 or marks[-1] >= size):
        raise IndexError(f"marked {what} out of range 0..{size - 1}: {marks}")
    return marks


def _identity_space_provenance(mesh: SpatialMesh) -> SpatialProvenance:
    return SpatialProvenance(
        status=np.zeros(mesh.n_dofs, dtype=int),
        old_to_new=np.arange(mesh.n_dofs),
        element_children=tuple((k,) for k in range(mesh.n_elements)),
        n_old_dofs=mesh.n_dofs,
    )


def bisect_spatial(
    mesh: SpatialMesh, marked: Iterable[int], h_min: float = H_MIN
) -> Tuple[SpatialMesh, SpatialProvenance]:
    """
    Split every marked element at its midpoint.

    On the circle the new node is projected radially back onto the circle.
    The provenance flags midpoint DoFs as new, DoFs whose support contains a
    split element as modified, and all others as unchanged.

    This function raises a MeshFloorError when a child would be shorter than
    ``h_min``.
    """
    marks = _validated_marks(marked, mesh.n_elements, "elements")
    if not marks:
        return mesh, _identity_space_provenance(mesh)

    too_small = [k for k in marks if 0.5 * mesh.lengths[k] < h_min]
    if too_small:
        raise MeshFloorError(
            f"bisecting elements {too_small} would go below h_min={h_min}"
        )

    is_marked = np.zeros(mesh.n_elements, dtype=bool)
    is_marked[marks] = True

    new_nodes, new_tags, children = [], [], []
    old_node_to_new = np.empty(mesh.n_nodes, dtype=int)
    midpoint_nodes = []
    for k in range(mesh.n_nodes):
        old_node_to_new[k] = len(new_nodes)
        new_nodes.append(mesh.nodes[k])
        if k >= mesh.n_elements:
            continue
        first = len(new_tags)
        new_tags.append(mesh.segment_tags[k])
        if is_marked[k]:
            p0, p1 = mesh.endpoints(k)
            midpoint = 0.5 * (p0 + p1)
            if mesh.geometry_tag == "circle":
                midpoint *= np.linalg.norm(p0) / np.linalg.norm(midpoint)
            midpoint_nodes.append(len(new_nodes))
            new_nodes.append(midpoint)
            new_tags.append(mesh.segment_tags[k])
            children.append((first, first + 1))
        else:
            children.append((first,))

    refined = mesh.with_nodes(np.array(new_nodes), np.array(new_tags))

    touched = np.zeros(mesh.n_nodes, dtype=bool)
    touched[mesh.elements[is_marked].ravel()] = True
    status = np.full(refined.n_dofs, int(DofStatus.UNCHANGED))
    for node in np.flatnonzero(touched):
        dof = refined.dof_map[old_node_to_new[node]]
        if dof >= 0:
            status[dof] = DofStatus.MODIFIED
    status[refined.dof_map[midpoint_nodes]] = DofStatus.NEW

    old_dof_nodes = np.flatnonzero(mesh.dof_map >= 0)
    old_to_new = refined.dof_map[old_node_to_new[old_dof_nodes]]

    logger.debug(
        f"Bisected {len(marks)} of {mesh.n_elements} elements, "
        f"{refined.n_dofs} DoFs now"
    )
    return refined, SpatialProvenance(
        status=status,
        old_to_new=old_to_new,
        element_children=tuple(children),
        n_old_dofs=mesh.n_dofs,
    )


def bisect_temporal(
    mesh: TimeMesh, marked: Iterable[int], dt_min: float = DT_MIN
) -> Tuple[TimeMesh, TimeProvenance]:
    """
    Split every marked time interval at its midpoint.

    The basis function of a split interval is replaced by the two functions
    of its halves; every other temporal basis function is kept as is.

    This function raises a MeshFloorError when a half would be shorter than
    ``dt_min``.
    """
    marks = _validated_marks(marked, mesh.n_intervals, "intervals")
    if not marks:
        n = mesh.n_intervals
        return mesh, TimeProvenance(
            status=np.zeros(n, dtype=int),
            old_to_new=np.arange(n),
            interval_children=tuple((i,) for i in range(n)),
        )

    too_small = [i for i in marks if 0.5 * mesh.steps[i] < dt_min]
    if too_small:
        raise MeshFloorError(
            f"bisecting intervals {too_small} would go below dt_min={dt_min}"
        )

    is_marked = np.zeros(mesh.n_intervals, dtype=bool)
    is_marked[marks] = True
    knots = [0.0]
    status, children = [], []
    old_to_new = np.full(mesh.n_intervals, -1)
    for i in range(mesh.n_intervals):
        first = len(status)
        if is_marked[i]:
            knots.append(0.5 * (mesh.knots[i] + mesh.knots[i + 1]))
            status.extend([DofStatus.NEW, DofStatus.NEW])
            children.append((first, first + 1))
        else:
            status.append(DofStatus.UNCHANGED)
            children.append((first,))
            old_to_new[i] = first
        knots.append(mesh.knots[i + 1])

    logger.debug(f"Bisected {len(marks)} of {mesh.n_intervals} time intervals")
    return TimeMesh(np.array(knots)), TimeProvenance(
        status=np.array(status, dtype=int),
        old_to_new=old_to_new,
        interval_children=tuple(children),
    )


def refine_all_space(
    mesh: SpatialMesh, h_min: float = H_MIN
) -> Tuple[SpatialMesh, SpatialProvenance]:
    return bisect_spatial(mesh, range(mesh.n_elements), h_min)


def refine_all_time(
    mesh: TimeMesh, dt_min: float = DT_MIN
) -> Tuple[TimeMesh, TimeProvenance]:
    return bisect_temporal(mesh, range(mesh.n_intervals), dt_min)


def cfl_extrema(space: SpatialMesh, time: TimeMesh) -> Tuple[float, float]:
    """Largest and smallest ratio dt_i / h_j over all pairs (i, j)."""
    h, dt = space.lengths, time.steps
    return float(dt.max() / h.min()), float(dt.min() / h.max())


def uniform_resolution_counts(space: SpatialMesh, time: TimeMesh) -> Tuple[int, int]:
    """
    DoF counts of the uniform discretization resolving the finest scales.

    The spatial count uses the smallest element, the temporal one the
    smallest step; both are rounded to whole elements of the same geometry.
    """
    n_elements = math.ceil(space.total_length() / space.lengths.min() - 1e-9)
    m_gamma = n_elements if space.closed else n_elements - 1
    n_t = math.ceil(time.final_time / time.steps.min() - 1e-9)
    return m_gamma, n_t


def write_space_mesh(mesh: SpatialMesh, path: Path | str) -> None:
    np.savetxt(path, mesh.nodes, fmt=FLOAT_FORMAT)


def write_time_mesh(mesh: TimeMesh, path: Path | str) -> None:
    np.savetxt(path, mesh.knots, fmt=FLOAT_FORMAT)
