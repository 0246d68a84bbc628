from __future__ import annotations

import math

import numpy as np
import pytest

from tdbem.exceptions import IncompatibleMeshError, MeshFloorError, UnknownPresetError
from tdbem.mesh import (
    BoxGrid,
    DofStatus,
    SpatialMesh,
    TimeMesh,
    Topology,
    bisect_spatial,
    bisect_temporal,
    build_geometry,
    cfl_extrema,
    refine_all_space,
    uniform_resolution_counts,
    write_space_mesh,
    write_time_mesh,
)


@pytest.mark.parametrize(
    "preset, n_elements, closed, n_dofs, length",
    [
        ("straight_crack", 10, False, 9, 0.1),
        ("angular_crack", 8, False, 7, 0.05),
        ("equilateral_triangle", 12, True, 12, 0.05),
        ("circle", 32, True, 32, 2 * 0.5 * math.sin(math.pi / 32)),
    ],
)
def test_build_geometry(preset, n_elements, closed, n_dofs, length):
    mesh = build_geometry(preset, n_elements)

    assert mesh.n_elements == n_elements
    assert mesh.closed == closed
    assert mesh.n_dofs == n_dofs
    assert np.allclose(mesh.lengths, length, rtol=1e-12)
    assert np.allclose(np.hypot(*mesh.normals.T), 1.0, rtol=1e-14)


def test_straight_crack_nodes():
    mesh = build_geometry("straight_crack", 10)

    assert np.allclose(mesh.nodes[:, 0], np.linspace(-0.5, 0.5, 11))
    assert np.all(mesh.nodes[:, 1] == 0.0)
    # tips carry no DoF
    assert mesh.dof_map[0] == -1 and mesh.dof_map[-1] == -1


@pytest.mark.parametrize(
    "preset, n_elements", [("circle", 16), ("equilateral_triangle", 9)]
)
def test_closed_curves_have_outward_normals(preset, n_elements):
    mesh = build_geometry(preset, n_elements)
    centroid = mesh.nodes.mean(axis=0)
    first, second = mesh.nodes[mesh.elements[:, 0]], mesh.nodes[mesh.elements[:, 1]]
    midpoints = 0.5 * (first + second)

    outward = np.einsum("ij,ij->i", midpoints - centroid, mesh.normals)
    assert np.all(outward > 0.0)


def test_angular_crack_junction():
    mesh = build_geometry("angular_crack", 4)

    apex = mesh.nodes[2]
    assert np.allclose(apex, (0.0, 0.1 * math.tan(math.pi / 3)))
    assert mesh.dof_map[2] >= 0
    assert list(mesh.segment_tags) == [1, 1, 2, 2]


def test_circle_nodes_on_circle():
    mesh = build_geometry("circle", 32)

    assert np.allclose(np.hypot(*mesh.nodes.T), 0.5, atol=1e-15)


@pytest.mark.parametrize(
    "preset, n_elements, error, match",
    [
        ("ellipse", 4, UnknownPresetError, "not in presets list"),
        ("angular_crack", 5, IncompatibleMeshError, "even number"),
        ("equilateral_triangle", 10, IncompatibleMeshError, "multiple of 3"),
        ("straight_crack", 0, IncompatibleMeshError, "must be positive"),
    ],
)
def test_build_geometry_errors(preset, n_elements, error, match):
    with pytest.raises(error, match=match):
        build_geometry(preset, n_elements)


def test_bisect_single_element(crack4):
    refined, provenance = bisect_spatial(crack4, {1})

    assert refined.n_elements == 5
    assert len(provenance.changed_dofs) == 3
    assert list(provenance.new_dofs) == [1]
    assert list(provenance.modified_dofs) == [0, 2]
    assert list(provenance.unchanged_dofs) == [3]
    old, new = provenance.unchanged_pairs()
    assert list(old) == [2] and list(new) == [3]
    assert provenance.element_children == ((0,), (1, 2), (3,), (4,))


def test_bisect_empty_marking_is_identity(crack4):
    refined, provenance = bisect_spatial(crack4, set())

    assert refined is crack4
    assert provenance.is_identity
    assert len(provenance.changed_dofs) == 0


def test_bisect_circle_projects_midpoint():
    mesh = build_geometry("circle", 8)
    refined, _ = bisect_spatial(mesh, {0})

    assert abs(np.hypot(*refined.nodes[1]) - 0.5) < 1e-14
    assert refined.total_length() > mesh.total_length()


def test_bisect_floor(crack4):
    with pytest.raises(MeshFloorError, match="h_min"):
        bisect_spatial(crack4, {0}, h_min=0.2)


def test_bisect_rejects_unknown_element(crack4):
    with pytest.raises(IndexError):
        bisect_spatial(crack4, {4})


@pytest.mark.parametrize("marks", [[0], [3, 1], [0, 1, 2, 3]])
def test_provenance_partition(crack4, marks):
    refined, provenance = bisect_spatial(crack4, marks)
    parts = np.concatenate(
        [provenance.new_dofs, provenance.modified_dofs, provenance.unchanged_dofs]
    )

    assert sorted(parts) == list(range(refined.n_dofs))
    assert math.isclose(refined.total_length(), crack4.total_length(), rel_tol=1e-12)


def test_dof_count_grows_by_one_per_bisection():
    mesh = build_geometry("straight_crack", 4)
    closed = build_geometry("equilateral_triangle", 6)
    for k in range(1, 4):
        mesh, _ = bisect_spatial(mesh, {0})
        closed, _ = bisect_spatial(closed, {k})
        assert mesh.n_dofs == 3 + k
        assert closed.n_dofs == 6 + k


def test_segment_tags_are_inherited():
    mesh = build_geometry("equilateral_triangle", 3)
    refined, _ = bisect_spatial(mesh, {1})

    assert list(refined.segment_tags) == [0, 1, 1, 2]


def test_bisect_temporal_first_interval():
    mesh = TimeMesh.uniform(math.pi / 4, 8)
    refined, provenance = bisect_temporal(mesh, {0})

    assert refined.n_intervals == 9
    assert np.allclose(refined.steps[:2], math.pi / 64)
    assert list(provenance.new_intervals) == [0, 1]
    assert provenance.old_to_new[0] == -1
    assert list(provenance.old_to_new[1:]) == list(range(2, 9))
    assert provenance.status[2] == DofStatus.UNCHANGED


def test_bisect_temporal_knots():
    refined, _ = bisect_temporal(TimeMesh.uniform(1.0, 2), {0, 1})

    assert np.allclose(refined.knots, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_bisect_temporal_identity():
    mesh = TimeMesh.uniform(1.0, 4)
    refined, provenance = bisect_temporal(mesh, [])

    assert refined is mesh
    assert provenance.is_identity


def test_bisect_temporal_floor():
    with pytest.raises(MeshFloorError, match="dt_min"):
        bisect_temporal(TimeMesh.uniform(1.0, 2), {0}, dt_min=0.3)


@pytest.mark.parametrize(
    "nodes, knots, expected",
    [
        ([(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)], [0.0, 0.1, 0.2], (1.0, 1.0)),
        ([(0.0, 0.0), (0.1, 0.0), (0.2, 0.0)], [0.0, 0.1, 0.15], (1.0, 0.5)),
        ([(0.0, 0.0), (0.1, 0.0), (0.5, 0.0)], [0.0, 0.2], (2.0, 0.5)),
    ],
)
def test_cfl_extrema(nodes, knots, expected):
    space = SpatialMesh(np.array(nodes), Topology.OPEN_ARC)
    largest, smallest = cfl_extrema(space, TimeMesh(np.array(knots)))

    assert math.isclose(largest, expected[0], rel_tol=1e-12)
    assert math.isclose(smallest, expected[1], rel_tol=1e-12)


@pytest.mark.parametrize(
    "knots",
    [[0.1, 0.2], [0.0, 0.2, 0.2], [0.0]],
)
def test_time_mesh_validation(knots):
    with pytest.raises(IncompatibleMeshError):
        TimeMesh(np.array(knots))


def test_box_grid(crack4, time3):
    boxes = BoxGrid(crack4, time3)

    assert boxes.shape == (3, 4)
    assert boxes.n_boxes == 12
    assert np.allclose(boxes.measures(), 0.25 * 0.25)
    assert np.allclose(boxes.diameters(), 0.25)


def test_uniform_resolution_counts(crack4):
    refined, _ = bisect_spatial(crack4, {0})
    time, _ = bisect_temporal(TimeMesh.uniform(1.0, 4), {2})

    assert uniform_resolution_counts(refined, time) == (7, 8)
    closed, _ = refine_all_space(build_geometry("equilateral_triangle", 3))
    assert uniform_resolution_counts(closed, time)[0] == 6


def test_mesh_snapshots(tmp_path, crack4, time3):
    write_space_mesh(crack4, tmp_path / "space.txt")
    write_time_mesh(time3, tmp_path / "time.txt")

    assert np.allclose(np.loadtxt(tmp_path / "space.txt"), crack4.nodes)
    assert np.allclose(np.loadtxt(tmp_path / "time.txt"), time3.knots)
    first = (tmp_path / "space.txt").read_text().splitlines()[0]
    assert first == "-5.000000000000e-01 0.000000000000e+00"
