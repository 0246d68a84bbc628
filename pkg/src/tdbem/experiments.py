from __future__ import annotations

import math
from typing import Dict, Literal, Optional

from pydantic import BaseModel, root_validator, validator

from tdbem.datum import NeumannDatum, get_datum
from tdbem.estimator import CoefficientPolicy, IndicatorConfig
from tdbem.exceptions import UnknownPresetError
from tdbem.mesh import SpatialMesh, TimeMesh, build_geometry

AdaptMode = Literal["space_adaptive", "time_adaptive", "uniform"]
CompanionRule = Literal["keep_cfl", "fixed_other_mesh"]


class ExperimentPreset(BaseModel):
    """
    Geometry, datum, meshes and reference energy of one numerical experiment,
    with the loop settings it is usually run with.

    The initial time mesh is uniform, given either by ``time_step`` or by
    ``n_intervals``.
    """

    name: str
    geometry: str
    n_elements: int
    datum: str
    final_time: float
    time_step: Optional[float] = None
    n_intervals: Optional[int] = None
    reference_energy: float
    indicator: IndicatorConfig = IndicatorConfig()
    mode: AdaptMode = "space_adaptive"
    companion: CompanionRule = "keep_cfl"
    uniform_axis: Literal["space", "time"] = "space"

    class Config:
        frozen = True

    @validator("reference_energy", "final_time")
    def positive(cls, value, field):
        if value <= 0.0:
            raise ValueError(f"{field.name} must be positive, got {value}")
        return value

    @root_validator(skip_on_failure=True)
    def one_time_resolution(cls, values):
        step, count = values.get("time_step"), values.get("n_intervals")
        if (step is None) == (count is None):
            raise ValueError("give exactly one of time_step and n_intervals")
        if step is not None:
            ratio = values["final_time"] / step
            if step <= 0.0 or abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ValueError(
                    f"time_step {step} does not divide final_time "
                    f"{values['final_time']}"
                )
        elif count < 1:
            raise ValueError(f"n_intervals must be positive, got {count}")
        return values

    @property
    def initial_intervals(self) -> int:
        if self.n_intervals is not None:
            return self.n_intervals
        return int(round(self.final_time / self.time_step))

    def initial_space_mesh(self) -> SpatialMesh:
        return build_geometry(self.geometry, self.n_elements)

    def initial_time_mesh(self) -> TimeMesh:
        return TimeMesh.uniform(self.final_time, self.initial_intervals)

    def neumann_datum(self) -> NeumannDatum:
        return get_datum(self.datum)


EXPERIMENT_PRESETS: Dict[str, ExperimentPreset] = {
    "straight_crack": ExperimentPreset(
        name="straight_crack",
        geometry="straight_crack",
        n_elements=10,
        datum="heaviside",
        final_time=2.0,
        time_step=0.1,
        reference_energy=0.79280,
        indicator=IndicatorConfig(coefficient_policy=CoefficientPolicy.PYTHAGOREAN),
    ),
    "angular_crack": ExperimentPreset(
        name="angular_crack",
        geometry="angular_crack",
        n_elements=8,
        datum="normal_x1",
        final_time=0.5,
        time_step=0.05,
        reference_energy=0.034012,
    ),
    "triangle": ExperimentPreset(
        name="triangle",
        geometry="equilateral_triangle",
        n_elements=12,
        datum="triangle_sides",
        final_time=0.5,
        time_step=0.05,
        reference_energy=0.063334,
    ),
    "circle": ExperimentPreset(
        name="circle",
        geometry="circle",
        n_elements=32,
        datum="circle_pulse",
        final_time=math.pi / 4.0,
        n_intervals=8,
        reference_energy=1.777,
        mode="time_adaptive",
        companion="fixed_other_mesh",
        uniform_axis="time",
    ),
}


def load_experiment(
    name: str,
    time_step: float | None = None,
    n_elements: int | None = None,
    companion: str | None = None,
    indicator: str | None = None,
    mode: str | None = None,
) -> ExperimentPreset:
    """
    Preset ``name`` with optional overrides; an override of ``time_step``
    replaces the preset's interval count.

    This function raises an UnknownPresetError when ``name`` is not a
    registered experiment and a pydantic ValidationError when an override is
    invalid.
    """
    if name not in EXPERIMENT_PRESETS:
        raise UnknownPresetError(
            f"Experiment {name} not in experiments list: {sorted(EXPERIMENT_PRESETS)}"
        )
    values = EXPERIMENT_PRESETS[name].dict()
    if time_step is not None:
        values.update(time_step=time_step, n_intervals=None)
    if n_elements is not None:
        values["n_elements"] = n_elements
    if companion is not None:
        values["companion"] = companion
    if mode is not None:
        values["mode"] = mode
    if indicator is not None:
        values["indicator"] = dict(values["indicator"], coefficient_policy=indicator)
    return ExperimentPreset(**values)
