"""
Shared fixtures: small meshes and systems that assemble in well under a
second, so that most tests can build their own.
"""
from __future__ import annotations

import pytest

from tdbem.assembly import Assembler
from tdbem.datum import get_datum
from tdbem.experiments import ExperimentPreset
from tdbem.mesh import TimeMesh, build_geometry
from tdbem.quadrature import QuadratureConfig
from tdbem.solver import block_forward_solve


@pytest.fixture
def qcfg() -> QuadratureConfig:
    return QuadratureConfig()


@pytest.fixture
def crack4():
    """Straight crack [-0.5, 0.5] with 4 elements and 3 interior DoFs"""
    return build_geometry("straight_crack", 4)


@pytest.fixture
def time3() -> TimeMesh:
    return TimeMesh.uniform(0.75, 3)


@pytest.fixture
def heaviside():
    return get_datum("heaviside")


@pytest.fixture
def crack_system(crack4, time3, heaviside, qcfg):
    return Assembler(qcfg).assemble_system(crack4, time3, heaviside)


@pytest.fixture
def crack_solution(crack_system):
    return block_forward_solve(crack_system)


@pytest.fixture
def tiny_preset() -> ExperimentPreset:
    return ExperimentPreset(
        name="tiny",
        geometry="straight_crack",
        n_elements=4,
        datum="heaviside",
        final_time=0.5,
        time_step=0.125,
        reference_energy=0.1,
    )
