from pathlib import Path
from typing import Annotated, Optional

import typer

from commands.common import exit_on_error
from dependencies import get_representor, get_steering_service, resolve_output_dir
from models import load_scenario


def sample_field(
        config: Annotated[Path, typer.Option("--config", "-c", help="Scenario TOML file")],
        lower: Annotated[float, typer.Option("--lower", help="Start of the index grid")],
        upper: Annotated[float, typer.Option("--upper", help="End of the index grid")],
        out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory")] = None,
        points: Annotated[int, typer.Option("--points", min=1)] = 200,
        paths: Annotated[int, typer.Option("--paths", min=0)] = 5,
        seed: Annotated[int, typer.Option("--seed", min=0)] = 0,
):
    """Sample paths of the scenario's random field with its 2-sigma band."""
    with exit_on_error():
        scenario = load_scenario(config)
        service = get_steering_service(resolve_output_dir(out, scenario))
        path = service.sample_field(scenario, lower, upper, n_points=points, n_paths=paths, seed=seed)
        get_representor().written([path])
