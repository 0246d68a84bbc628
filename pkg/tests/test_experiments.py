from __future__ import annotations

import math

import pytest
from pydantic import ValidationError

from tdbem.estimator import CoefficientPolicy
from tdbem.exceptions import IncompatibleMeshError, UnknownPresetError
from tdbem.experiments import EXPERIMENT_PRESETS, ExperimentPreset, load_experiment


@pytest.mark.parametrize(
    "name, m_gamma, n_t, reference_energy",
    [
        ("straight_crack", 9, 20, 0.79280),
        ("angular_crack", 7, 10, 0.034012),
        ("triangle", 12, 10, 0.063334),
        ("circle", 32, 8, 1.777),
    ],
)
def test_presets(name, m_gamma, n_t, reference_energy):
    preset = load_experiment(name)

    assert preset.initial_space_mesh().n_dofs == m_gamma
    assert preset.initial_time_mesh().n_intervals == n_t
    assert preset.reference_energy == reference_energy
    assert preset.neumann_datum().name == preset.datum


def test_circle_preset_runs_in_time():
    preset = EXPERIMENT_PRESETS["circle"]

    assert preset.mode == "time_adaptive"
    assert preset.companion == "fixed_other_mesh"
    assert preset.initial_time_mesh().final_time == pytest.approx(math.pi / 4)


def test_straight_crack_uses_pythagorean_coefficients():
    preset = load_experiment("straight_crack")

    assert preset.indicator.coefficient_policy == CoefficientPolicy.PYTHAGOREAN


def test_overrides():
    preset = load_experiment(
        "circle",
        time_step=math.pi / 16,
        n_elements=16,
        companion="keep_cfl",
        indicator="h_only",
        mode="uniform",
    )

    assert preset.n_intervals is None
    assert preset.initial_intervals == 4
    assert preset.initial_space_mesh().n_elements == 16
    assert preset.companion == "keep_cfl"
    assert preset.mode == "uniform"
    assert preset.indicator.coefficient_policy == CoefficientPolicy.H_ONLY
    # the preset table itself is untouched
    assert EXPERIMENT_PRESETS["circle"].n_intervals == 8


def test_unknown_experiment():
    with pytest.raises(UnknownPresetError, match="not in experiments list"):
        load_experiment("square")


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"time_step": 0.3}, "does not divide"),
        ({"mode": "adaptive"}, "mode"),
        ({"indicator": "l2"}, "coefficient_policy"),
    ],
)
def test_invalid_overrides(kwargs, match):
    with pytest.raises(ValidationError, match=match):
        load_experiment("straight_crack", **kwargs)


def test_incompatible_element_count():
    preset = load_experiment("triangle", n_elements=10)

    with pytest.raises(IncompatibleMeshError):
        preset.initial_space_mesh()


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"time_step": 0.1, "n_intervals": 5}, "exactly one"),
        ({}, "exactly one"),
        ({"n_intervals": 0}, "positive"),
        ({"n_intervals": 4, "reference_energy": 0.0}, "reference_energy"),
    ],
)
def test_preset_validation(kwargs, match):
    values = dict(
        name="custom",
        geometry="circle",
        n_elements=8,
        datum="heaviside",
        final_time=0.5,
        reference_energy=1.0,
    )
    values.update(kwargs)

    with pytest.raises(ValidationError, match=match):
        ExperimentPreset(**values)
