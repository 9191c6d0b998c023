from pathlib import Path
from typing import Optional, Union

from rich.console import Console

import config
from core.representor import Representor
from models import ScenarioConfig
from repository import FileArtifactRepository
from services import SteeringService
from solvers import CvxpyConicAdapter, SolverAdapter


def get_solver_adapter() -> SolverAdapter:
    return CvxpyConicAdapter(solver=config.SOLVER_NAME, verbose=config.SOLVER_VERBOSE)


def resolve_output_dir(out: Optional[Union[str, Path]], scenario: Optional[ScenarioConfig] = None) -> Path:
    """Command-line flag first, then the scenario's output section, then the environment default."""
    if out is not None:
        return Path(out)
    if scenario is not None and scenario.output.directory:
        return Path(scenario.output.directory)
    return Path(config.OUTPUT_DIR)


def get_artifact_repository(directory: Union[str, Path]) -> FileArtifactRepository:
    return FileArtifactRepository(directory)


def get_steering_service(directory: Union[str, Path], adapter: Optional[SolverAdapter] = None) -> SteeringService:
    """Provides a SteeringService writing into ``directory``."""
    return SteeringService(adapter=adapter or get_solver_adapter(), repository=get_artifact_repository(directory))


def get_representor() -> Representor:
    return Representor(console=Console(), error_console=Console(stderr=True))
