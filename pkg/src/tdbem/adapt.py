from __future__ import annotations

import dataclasses
import logging
import time as timer
from dataclasses import dataclass
from logging import Logger
from typing import Callable, List, Optional, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, validator

from tdbem.assembly import Assembler, BlockSystem, Solution
from tdbem.constants import DT_MIN, H_MIN, LEVELS_CSV_COLUMNS, THETA
from tdbem.estimator import IndicatorConfig, IndicatorField, compute_indicators
from tdbem.exceptions import MeshFloorError
from tdbem.experiments import AdaptMode, CompanionRule, ExperimentPreset
from tdbem.mesh import (
    SpatialMesh,
    TimeMesh,
    bisect_spatial,
    bisect_temporal,
    cfl_extrema,
    refine_all_space,
    refine_all_time,
    uniform_resolution_counts,
)
from tdbem.quadrature import QuadratureConfig
from tdbem.solver import block_forward_solve, discrete_energy, squared_energy_error

module_logger = logging.getLogger(__name__)

CFL_RTOL = 1e-12
# uniform companion refinements allowed per level
MAX_COMPANION_STEPS = 8


class AdaptConfig(BaseModel):
    mode: AdaptMode = "space_adaptive"
    theta: float = THETA
    epsilon: float = 0.0
    max_levels: int = 6
    companion: CompanionRule = "keep_cfl"
    h_min: float = H_MIN
    dt_min: float = DT_MIN

    class Config:
        frozen = True

    @validator("theta")
    def theta_in_unit_interval(cls, value):
        if not 0.0 < value < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {value}")
        return value

    @validator("epsilon")
    def non_negative_tolerance(cls, value):
        if value < 0.0:
            raise ValueError(f"epsilon cannot be negative, got {value}")
        return value

    @validator("max_levels")
    def at_least_one_level(cls, value):
        if value < 1:
            raise ValueError(f"max_levels must be at least 1, got {value}")
        return value

    @validator("h_min", "dt_min")
    def positive_floor(cls, value):
        if value <= 0.0:
            raise ValueError(f"mesh floors must be positive, got {value}")
        return value


@dataclass
class LevelRecord:
    level: int
    m_gamma: int
    n_t: int
    dofs: int
    energy: float
    sq_energy_error: float
    indicator_total: float
    marked: int
    memory_s: float
    walltime_s: float
    stop_reason: str = ""

    def row(self) -> tuple:
        return tuple(dataclasses.astuple(self)[: len(LEVELS_CSV_COLUMNS)])


@dataclass(frozen=True, eq=False)
class LevelState:
    """Meshes, system, solution and indicators of one level."""

    space: SpatialMesh
    time: TimeMesh
    system: BlockSystem
    solution: Solution
    indicators: IndicatorField


LevelCallback = Callable[[LevelRecord, LevelState], None]


def mark(eta, theta: float) -> npt.NDArray[np.int64]:
    """Indices k with eta[k] > theta * max(eta), in increasing order."""
    eta = np.asarray(eta, dtype=float)
    return np.flatnonzero(eta > theta * eta.max())


def storage(m_gamma: int, n_t: int, mode: str) -> float:
    """Stored matrix entries: Toeplitz column, or full lower triangle in time mode."""
    if mode == "time_adaptive":
        return float(m_gamma) ** 2 * n_t * (n_t + 1) / 2.0
    return float(m_gamma) ** 2 * n_t


def memory_savings(record: LevelRecord, baseline: LevelRecord, mode: str) -> float:
    return 1.0 - storage(record.m_gamma, record.n_t, mode) / storage(
        baseline.m_gamma, baseline.n_t, "uniform"
    )


def matched_memory_savings(
    adaptive: Sequence[LevelRecord],
    uniform: Sequence[LevelRecord],
    error_level: float,
    mode: str,
) -> float:
    """
    Memory savings of the adaptive run against the uniform one at the same
    squared energy error.

    The memory of each run is interpolated linearly in log(error) vs
    log(memory); error levels outside a run's range take its closest level.
    """

    def log_memory(records: Sequence[LevelRecord], record_mode: str) -> float:
        errors = np.log([r.sq_energy_error for r in records])
        memory = np.log([storage(r.m_gamma, r.n_t, record_mode) for r in records])
        order = np.argsort(errors)
        return float(np.interp(np.log(error_level), errors[order], memory[order]))

    return 1.0 - float(
        np.exp(log_memory(adaptive, mode) - log_memory(uniform, "uniform"))
    )


def records_frame(records: Sequence[LevelRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in records], columns=list(LEVELS_CSV_COLUMNS))


class AdaptiveLoop:
    """
    SOLVE, ESTIMATE, MARK and REFINE on a tensor-product space-time mesh.

    In space mode the aggregated indicators eta_j select elements to bisect,
    in time mode eta_i selects intervals; uniform mode refines the preset's
    uniform axis everywhere. The other mesh follows the companion rule:
    ``keep_cfl`` refines it uniformly as often as needed to hold the largest
    (space mode) or smallest (time mode) ratio dt/h at its initial value,
    ``fixed_other_mesh`` leaves it untouched and updates the system
    incrementally.
    """

    def __init__(
        self,
        experiment: ExperimentPreset,
        cfg: AdaptConfig | None = None,
        icfg: IndicatorConfig | None = None,
        qcfg: QuadratureConfig | None = None,
        threads: int | None = 1,
        logger: Logger | None = None,
        on_level: LevelCallback | None = None,
    ) -> None:
        self.experiment = experiment
        self.cfg = cfg or AdaptConfig(
            mode=experiment.mode, companion=experiment.companion
        )
        self.icfg = icfg or experiment.indicator
        self.qcfg = qcfg or QuadratureConfig()
        self.threads = threads
        self.assembler = Assembler(self.qcfg, threads)
        self.datum = experiment.neumann_datum()
        self._logger = logger or module_logger
        self._on_level = on_level

    @property
    def axis(self) -> str:
        if self.cfg.mode == "space_adaptive":
            return "space"
        if self.cfg.mode == "time_adaptive":
            return "time"
        return self.experiment.uniform_axis

    def run(self) -> List[LevelRecord]:
        cfg = self.cfg
        start = timer.perf_counter()
        space = self.experiment.initial_space_mesh()
        time = self.experiment.initial_time_mesh()
        self._initial_cfl = cfl_extrema(space, time)
        system = self.assembler.assemble_system(space, time, self.datum)

        records: List[LevelRecord] = []
        for level in range(cfg.max_levels):
            solution = block_forward_solve(system)
            energy = discrete_energy(system, solution)
            indicators = compute_indicators(
                solution, self.datum, self.icfg, self.qcfg, self.threads
            )
            eta = indicators.eta_space if self.axis == "space" else indicators.eta_time

            stop_reason = ""
            if indicators.total < cfg.epsilon:
                stop_reason = "tolerance"
            elif level == cfg.max_levels - 1:
                stop_reason = "level_cap"

            marked: Optional[np.ndarray] = None
            if not stop_reason:
                marked = np.arange(len(eta)) if cfg.mode == "uniform" else mark(
                    eta, cfg.theta
                )
                try:
                    new_system = self._refine(system, marked)
                except MeshFloorError as exc:
                    self._logger.warning(f"Level {level}: {exc.message}")
                    stop_reason, marked = "mesh_floor", None

            m_uniform, n_uniform = uniform_resolution_counts(space, time)
            record = LevelRecord(
                level=level,
                m_gamma=space.n_dofs,
                n_t=time.n_intervals,
                dofs=space.n_dofs * time.n_intervals,
                energy=energy,
                sq_energy_error=squared_energy_error(
                    energy, self.experiment.reference_energy
                ),
                indicator_total=indicators.total,
                marked=0 if marked is None else len(marked),
                memory_s=1.0
                - storage(space.n_dofs, time.n_intervals, cfg.mode)
                / storage(m_uniform, n_uniform, "uniform"),
                walltime_s=timer.perf_counter() - start,
                stop_reason=stop_reason,
            )
            records.append(record)
            self._logger.info(
                f"level {level}: M_Gamma={record.m_gamma} N_T={record.n_t} "
                f"energy={energy:.6e} indicator={indicators.total:.6e} "
                f"marked={record.marked}"
            )
            if self._on_level is not None:
                self._on_level(
                    record, LevelState(space, time, system, solution, indicators)
                )

            if stop_reason:
                if stop_reason != "tolerance":
                    self._logger.warning(f"Stopped at level {level}: {stop_reason}")
                break
            start = timer.perf_counter()
            system = new_system
            space, time = system.space, system.time
        return records

    def _refine(self, system: BlockSystem, marked: np.ndarray) -> BlockSystem:
        cfg = self.cfg
        keep_cfl = cfg.companion == "keep_cfl"
        if self.axis == "space":
            space, provenance = bisect_spatial(system.space, marked, cfg.h_min)
            time = self._follow_in_time(space, system.time) if keep_cfl else system.time
            if time is system.time:
                return self.assembler.update_after_space_refinement(
                    system, provenance, space
                )
        else:
            time, provenance = bisect_temporal(system.time, marked, cfg.dt_min)
            space = (
                self._follow_in_space(system.space, time) if keep_cfl else system.space
            )
            if space is system.space:
                return self.assembler.update_after_time_refinement(
                    system, provenance, time
                )
        # both meshes changed: every entry is rebuilt, from cached pair terms
        # where the element geometry and lag were seen before
        self._logger.info(
            f"Reassembling on both refined meshes ({space.n_dofs} DoFs, "
            f"{time.n_intervals} intervals) with {self.assembler.cached_terms} "
            f"element-pair terms cached"
        )
        return self.assembler.assemble_system(space, time, self.datum)

    def _follow_in_time(self, space: SpatialMesh, time: TimeMesh) -> TimeMesh:
        largest = self._initial_cfl[0] * (1.0 + CFL_RTOL)
        for _ in range(MAX_COMPANION_STEPS):
            if cfl_extrema(space, time)[0] <= largest:
                break
            time, _ = refine_all_time(time, self.cfg.dt_min)
        return time

    def _follow_in_space(self, space: SpatialMesh, time: TimeMesh) -> SpatialMesh:
        smallest = self._initial_cfl[1] * (1.0 - CFL_RTOL)
        for _ in range(MAX_COMPANION_STEPS):
            if cfl_extrema(space, time)[1] >= smallest:
                break
            space, _ = refine_all_space(space, self.cfg.h_min)
        return space


def _run_mode(mode: str, cfg, experiment, **kwargs) -> List[LevelRecord]:
    cfg = (cfg or AdaptConfig(companion=experiment.companion)).copy(
        update={"mode": mode}
    )
    return AdaptiveLoop(experiment, cfg, **kwargs).run()


def space_adaptive_loop(
    cfg: AdaptConfig | None, experiment: ExperimentPreset, **kwargs
) -> List[LevelRecord]:
    return _run_mode("space_adaptive", cfg, experiment, **kwargs)


def time_adaptive_loop(
    cfg: AdaptConfig | None, experiment: ExperimentPreset, **kwargs
) -> List[LevelRecord]:
    return _run_mode("time_adaptive", cfg, experiment, **kwargs)


def uniform_loop(
    cfg: AdaptConfig | None, experiment: ExperimentPreset, **kwargs
) -> List[LevelRecord]:
    return _run_mode("uniform", cfg, experiment, **kwargs)
