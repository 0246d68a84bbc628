"""
Command-line entry point reproducing the adaptive wave-equation experiments.

``tdbem run`` executes one experiment loop and writes ``levels.csv`` with one
row per refinement level, plus the indicators and both meshes of every level.
``tdbem savings`` compares an adaptive and a uniform ``levels.csv`` at a
given squared energy error.

Settings come from an optional flat JSON file (``--config``); flags of the
same name override it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import BaseModel, ValidationError, validator

from tdbem import __version__
from tdbem.adapt import (
    AdaptConfig,
    AdaptiveLoop,
    LevelRecord,
    LevelState,
    matched_memory_savings,
    records_frame,
)
from tdbem.constants import (
    CONE_SHRINK,
    DT_MIN,
    EXIT_CONFIG,
    EXIT_MESH_FLOOR,
    EXIT_NUMERICAL,
    EXIT_OK,
    FLOAT_FORMAT,
    H_MIN,
    INNER_ORDER,
    LEVELS_CSV_COLUMNS,
    OUTER_ORDER,
    THETA,
    TIME_ORDER,
)
from tdbem.estimator import CoefficientPolicy, IndicatorConfig, write_indicators
from tdbem.exceptions import (
    ConfigurationError,
    IncompatibleMeshError,
    KernelDomainError,
    QuadratureContractError,
    SingularBlockError,
    UnknownPresetError,
)
from tdbem.experiments import (
    AdaptMode,
    CompanionRule,
    ExperimentPreset,
    load_experiment,
)
from tdbem.mesh import write_space_mesh, write_time_mesh
from tdbem.quadrature import QuadratureConfig

__author__ = "tdbem developers"
__license__ = "Apache-2.0"

_logger = logging.getLogger(__name__)

COMMANDS = ("run", "savings")
CONFIG_ERRORS = (
    ConfigurationError,
    UnknownPresetError,
    IncompatibleMeshError,
    ValidationError,
)
NUMERICAL_ERRORS = (
    SingularBlockError,
    KernelDomainError,
    QuadratureContractError,
    FloatingPointError,
)


class RunSettings(BaseModel):
    """Flat run configuration; ``None`` keeps the experiment's own choice."""

    experiment: str = "straight_crack"
    mode: Optional[AdaptMode] = None
    companion: Optional[CompanionRule] = None
    theta: float = THETA
    epsilon: float = 0.0
    max_levels: int = 6
    indicator: Optional[CoefficientPolicy] = None
    sobolev_s: Optional[float] = None
    outer_order: int = OUTER_ORDER
    inner_order: int = INNER_ORDER
    time_order: int = TIME_ORDER
    cone_shrink: float = CONE_SHRINK
    threads: Optional[int] = None
    out: str = "tdbem-out"
    n_elements: Optional[int] = None
    time_step: Optional[float] = None
    h_min: float = H_MIN
    dt_min: float = DT_MIN

    class Config:
        extra = "forbid"

    @validator("threads")
    def positive_threads(cls, value):
        if value is not None and value < 1:
            raise ValueError(f"threads must be positive, got {value}")
        return value

    def preset(self) -> ExperimentPreset:
        return load_experiment(
            self.experiment,
            time_step=self.time_step,
            n_elements=self.n_elements,
            companion=self.companion,
            indicator=self.indicator,
            mode=self.mode,
        )

    def adapt_config(self, preset: ExperimentPreset) -> AdaptConfig:
        return AdaptConfig(
            mode=preset.mode,
            theta=self.theta,
            epsilon=self.epsilon,
            max_levels=self.max_levels,
            companion=preset.companion,
            h_min=self.h_min,
            dt_min=self.dt_min,
        )

    def indicator_config(self, preset: ExperimentPreset) -> IndicatorConfig:
        if self.sobolev_s is None:
            return preset.indicator
        return IndicatorConfig(
            coefficient_policy=preset.indicator.coefficient_policy,
            sobolev_s=self.sobolev_s,
        )

    def quadrature_config(self) -> QuadratureConfig:
        return QuadratureConfig(
            outer_order=self.outer_order,
            inner_order=self.inner_order,
            time_order=self.time_order,
            cone_shrink=self.cone_shrink,
        )


# ---- Python API ----


def load_settings(config: Path | str | None, overrides: dict) -> RunSettings:
    """
    Settings from the JSON file ``config`` with ``overrides`` applied on top.

    This function raises a ConfigurationError when the file cannot be read
    and a pydantic ValidationError when a value is invalid.
    """
    values = dict()
    if config is not None:
        try:
            values = RunSettings.parse_file(config).dict(exclude_unset=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {config}: {exc}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunSettings(**values)


def write_levels(records: List[LevelRecord], path: Path | str) -> None:
    records_frame(records).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_levels(path: Path | str) -> List[LevelRecord]:
    frame = pd.read_csv(path)
    if tuple(frame.columns) != LEVELS_CSV_COLUMNS:
        raise ConfigurationError(f"{path} does not have the levels.csv header")
    return [LevelRecord(*row) for row in frame.itertuples(index=False)]


def level_writer(out: Path):
    def write(record: LevelRecord, state: LevelState) -> None:
        k = record.level
        write_indicators(state.indicators, out / f"indicators-L{k}.txt")
        write_space_mesh(state.space, out / f"mesh-space-L{k}.txt")
        write_time_mesh(state.time, out / f"mesh-time-L{k}.txt")

    return write


def execute(settings: RunSettings) -> List[LevelRecord]:
    """Run the configured loop, writing all outputs into ``settings.out``."""
    preset = settings.preset()
    out = Path(settings.out)
    out.mkdir(parents=True, exist_ok=True)
    loop = AdaptiveLoop(
        preset,
        cfg=settings.adapt_config(preset),
        icfg=settings.indicator_config(preset),
        qcfg=settings.quadrature_config(),
        threads=settings.threads,
        logger=_logger,
        on_level=level_writer(out),
    )
    records = loop.run()
    write_levels(records, out / "levels.csv")
    return records


# ---- CLI ----


def parse_args(args):
    """Parse command line parameters

    Args:
      args (List[str]): command line parameters as list of strings
          (for example  ``["--help"]``).

    Returns:
      :obj:`argparse.Namespace`: command line parameters namespace
    """
    if not args or args[0] not in (*COMMANDS, "-h", "--help", "--version"):
        args = ["run", *args]

    parser = argparse.ArgumentParser(
        description="Adaptive space-time Galerkin BEM for the 2D wave equation"
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"tdbem {__version__}",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="run an experiment loop")
    run_cmd.add_argument("--config", help="flat JSON settings file")
    run_cmd.add_argument("--experiment", help="experiment preset name")
    run_cmd.add_argument(
        "--mode", choices=["space_adaptive", "time_adaptive", "uniform"]
    )
    run_cmd.add_argument("--companion", choices=["keep_cfl", "fixed_other_mesh"])
    run_cmd.add_argument("--theta", type=float, help="marking parameter")
    run_cmd.add_argument("--epsilon", type=float, help="indicator tolerance")
    run_cmd.add_argument("--max-levels", type=int, dest="max_levels")
    run_cmd.add_argument("--indicator", choices=[p.value for p in CoefficientPolicy])
    run_cmd.add_argument("--sobolev-s", type=float, dest="sobolev_s")
    run_cmd.add_argument("--outer-order", type=int, dest="outer_order")
    run_cmd.add_argument("--inner-order", type=int, dest="inner_order")
    run_cmd.add_argument("--time-order", type=int, dest="time_order")
    run_cmd.add_argument("--cone-shrink", type=float, dest="cone_shrink")
    run_cmd.add_argument(
        "--threads", type=int, help="worker threads (default: all cores)"
    )
    run_cmd.add_argument("--out", help="output directory")
    run_cmd.add_argument("--n-elements", type=int, dest="n_elements")
    run_cmd.add_argument("--time-step", type=float, dest="time_step")
    run_cmd.add_argument("--h-min", type=float, dest="h_min")
    run_cmd.add_argument("--dt-min", type=float, dest="dt_min")

    savings_cmd = commands.add_parser(
        "savings", help="memory savings of an adaptive run at a given error"
    )
    savings_cmd.add_argument("adaptive", help="levels.csv of the adaptive run")
    savings_cmd.add_argument("uniform", help="levels.csv of the uniform run")
    savings_cmd.add_argument("--error-level", type=float, required=True)
    savings_cmd.add_argument(
        "--mode", choices=["space_adaptive", "time_adaptive"], required=True
    )

    for cmd in (run_cmd, savings_cmd):
        cmd.add_argument(
            "-v",
            "--verbose",
            dest="loglevel",
            help="set loglevel to INFO",
            action="store_const",
            const=logging.INFO,
        )
        cmd.add_argument(
            "-vv",
            "--very-verbose",
            dest="loglevel",
            help="set loglevel to DEBUG",
            action="store_const",
            const=logging.DEBUG,
        )
    return parser.parse_args(args)


def setup_logging(loglevel):
    """Setup basic logging

    Args:
      loglevel (int): minimum loglevel for emitting messages
    """
    logformat = "[%(asctime)s] %(levelname)s:%(name)s:%(message)s"
    logging.basicConfig(
        level=loglevel or logging.WARNING,
        stream=sys.stdout,
        format=logformat,
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _run_command(args) -> int:
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in ("command", "config", "loglevel")
    }
    try:
        settings = load_settings(args.config, overrides)
        records = execute(settings)
    except CONFIG_ERRORS as exc:
        _logger.error(f"Invalid configuration: {exc}")
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        _logger.error(f"Numerical failure: {exc}")
        return EXIT_NUMERICAL
    except OSError as exc:
        _logger.error(f"Cannot write outputs: {exc}")
        return EXIT_CONFIG
    if records[-1].stop_reason == "mesh_floor":
        return EXIT_MESH_FLOOR
    return EXIT_OK


def _savings_command(args) -> int:
    try:
        adaptive = read_levels(args.adaptive)
        uniform = read_levels(args.uniform)
    except (ConfigurationError, OSError) as exc:
        _logger.error(f"Cannot read levels: {exc}")
        return EXIT_CONFIG
    savings = matched_memory_savings(adaptive, uniform, args.error_level, args.mode)
    print(f"S = {savings:.4f} at squared energy error {args.error_level:g}")
    return EXIT_OK


def main(args):
    """Wrapper allowing the experiment loops to be called with string
    arguments in a CLI fashion

    Args:
      args (List[str]): command line parameters as list of strings

    Returns:
      int: exit status
    """
    args = parse_args(args)
    setup_logging(args.loglevel)
    _logger.debug(f"Starting tdbem {args.command}")
    if args.command == "savings":
        return _savings_command(args)
    return _run_command(args)


def run():
    """Calls :func:`main` passing the CLI arguments extracted from :obj:`sys.argv`

    This function can be used as entry point to create console scripts with
    setuptools.
    """
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
