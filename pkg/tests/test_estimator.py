from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError

from tdbem.assembly import Solution, assemble_system
from tdbem.datum import get_datum
from tdbem.estimator import (
    CoefficientPolicy,
    IndicatorConfig,
    IndicatorField,
    compute_indicators,
    eval_W_psih,
    eval_W_psih_batch,
    galerkin_defect,
    indicator_coefficients,
    indicators_from_residuals,
    locate_point,
    residual_norm_box,
    residual_norms,
    write_indicators,
)
from tdbem.exceptions import QuadratureContractError
from tdbem.experiments import load_experiment
from tdbem.mesh import TimeMesh, bisect_spatial, bisect_temporal, build_geometry
from tdbem.quadrature import QuadratureConfig
from tdbem.solver import block_forward_solve


@pytest.fixture
def zero_solution(crack4, time3):
    return Solution(np.zeros((3, 3)), crack4, time3)


def test_zero_solution_leaves_the_datum(zero_solution, heaviside, qcfg):
    norms = residual_norms(zero_solution, heaviside, qcfg)

    # |f|^2 = 1 over boxes of 0.25 x 0.25
    np.testing.assert_allclose(norms, 0.0625, rtol=1e-14)
    indicators = compute_indicators(zero_solution, heaviside, qcfg=qcfg)
    np.testing.assert_allclose(indicators.eta_box, 0.25 * 0.0625, rtol=1e-14)


def test_residual_is_quadratic_in_the_solution(crack_solution, heaviside, qcfg):
    silent = heaviside.scaled(0.0)
    once = residual_norms(crack_solution, silent, qcfg)
    twice = residual_norms(crack_solution.scaled(2.0), silent, qcfg)

    assert np.all(once > 0.0)
    np.testing.assert_allclose(twice, 4.0 * once, rtol=1e-12)


def test_wave_operator_is_causal(crack_solution):
    values = eval_W_psih_batch(crack_solution, 1, [0.3, 0.7], [-0.5, 0.0])

    assert np.all(values == 0.0)


def test_point_evaluation_matches_batch(crack_solution, qcfg):
    x = (-0.25 + 0.3 * 0.25, 0.0)
    batch = eval_W_psih_batch(crack_solution, 1, [0.3], [0.4, 0.6], qcfg)

    assert eval_W_psih(x, 0.6, crack_solution, qcfg) == pytest.approx(
        batch[1, 0], rel=1e-12
    )


@pytest.mark.parametrize(
    "x, match",
    [
        ((-0.25, 0.0), "element node"),
        ((0.1, 0.2), "does not lie on the mesh"),
    ],
)
def test_locate_point_errors(crack4, x, match):
    with pytest.raises(QuadratureContractError, match=match):
        locate_point(crack4, x)


def test_locate_point(crack4):
    element, s = locate_point(crack4, (0.1, 0.0))

    assert element == 2
    assert s == pytest.approx(0.4)


def test_batch_rejects_nodes(crack_solution):
    with pytest.raises(QuadratureContractError, match="strictly inside"):
        eval_W_psih_batch(crack_solution, 0, [0.0, 0.5], [0.5])


def test_box_norm_matches_full_field(crack_solution, heaviside, qcfg):
    norms = residual_norms(crack_solution, heaviside, qcfg)

    for i, j in [(0, 0), (2, 1), (1, 3)]:
        assert residual_norm_box(i, j, crack_solution, heaviside, qcfg) == (
            pytest.approx(norms[i, j], rel=1e-10)
        )


def test_residual_norms_do_not_depend_on_threads(crack_solution, heaviside, qcfg):
    serial = residual_norms(crack_solution, heaviside, qcfg, threads=1)
    parallel = residual_norms(crack_solution, heaviside, qcfg, threads=3)

    np.testing.assert_array_equal(serial, parallel)


def test_galerkin_defect_vanishes(crack_system, crack_solution, heaviside):
    cfg = QuadratureConfig(time_order=8)
    defect = galerkin_defect(crack_solution, heaviside, cfg)

    assert defect.shape == (3, 3)
    assert np.abs(defect).max() <= 5e-2 * np.abs(crack_system.rhs).max()


@pytest.mark.parametrize(
    "policy, sobolev_s, expected",
    [
        (CoefficientPolicy.MAX, 0.5, 0.2),
        (CoefficientPolicy.MAX, 0.0, 0.1),
        (CoefficientPolicy.PYTHAGOREAN, 0.5, 0.4 * math.hypot(0.5, 0.25)),
        (CoefficientPolicy.H_ONLY, 0.5, 0.1),
        (CoefficientPolicy.DT_ONLY, 0.25, 0.4 * 0.5**1.5),
    ],
)
def test_indicator_coefficients(crack4, policy, sobolev_s, expected):
    time = TimeMesh.uniform(1.0, 2)
    icfg = IndicatorConfig(coefficient_policy=policy, sobolev_s=sobolev_s)
    indicators = indicators_from_residuals(np.full((2, 4), 0.4), crack4, time, icfg)

    np.testing.assert_allclose(indicators.eta_box, expected, rtol=1e-14)


def test_policies_are_ordered(crack4):
    space, _ = bisect_spatial(crack4, {0, 2})
    time, _ = bisect_temporal(TimeMesh.uniform(1.0, 4), {1})

    def coefficients(policy):
        icfg = IndicatorConfig(coefficient_policy=policy, sobolev_s=0.5)
        return indicator_coefficients(space, time, icfg)

    largest = coefficients(CoefficientPolicy.MAX)
    assert np.all(coefficients(CoefficientPolicy.H_ONLY) <= largest)
    assert np.all(coefficients(CoefficientPolicy.DT_ONLY) <= largest)
    pythagorean = coefficients(CoefficientPolicy.PYTHAGOREAN)
    assert np.all(largest <= pythagorean)
    assert np.all(pythagorean <= math.sqrt(2.0) * largest)


def test_sobolev_s_is_validated():
    with pytest.raises(ValidationError, match="sobolev_s"):
        IndicatorConfig(sobolev_s=0.7)


def test_indicator_field_aggregates():
    field = IndicatorField(np.array([[1.0, 2.0, 0.0], [0.5, 0.5, 1.0]]))

    assert list(field.eta_space) == [1.5, 2.5, 1.0]
    assert list(field.eta_time) == [3.0, 2.0]
    assert field.total == 5.0
    with pytest.raises(ValueError):
        field.eta_box[0, 0] = 3.0


@pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf])
def test_indicator_field_rejects_bad_values(bad):
    with pytest.raises(ValueError, match="non-negative"):
        IndicatorField(np.array([[1.0, bad]]))


def test_write_indicators(tmp_path, zero_solution, heaviside, qcfg):
    indicators = compute_indicators(zero_solution, heaviside, qcfg=qcfg)
    path = tmp_path / "indicators.txt"
    write_indicators(indicators, path)

    lines = path.read_text().splitlines()
    assert len(lines) == 12
    assert lines[0] == "0 0 1.562500000000e-02"
    assert lines[-1].startswith("2 3 ")


def test_zero_solution_on_a_closed_curve():
    space = build_geometry("equilateral_triangle", 6)
    time = TimeMesh.uniform(0.1, 2)
    datum = get_datum("heaviside")
    solution = Solution(np.zeros((2, 6)), space, time)
    norms = residual_norms(solution, datum)

    np.testing.assert_allclose(norms, norms[0, 0], rtol=1e-12)


@pytest.mark.slow
def test_galerkin_defect_on_the_straight_crack_preset():
    preset = load_experiment("straight_crack")
    datum = preset.neumann_datum()
    system = assemble_system(
        preset.initial_space_mesh(), preset.initial_time_mesh(), datum
    )
    solution = block_forward_solve(system)

    defect = galerkin_defect(solution, datum, threads=None)
    assert np.abs(defect).max() <= 1e-3 * np.linalg.norm(system.rhs)
