from pathlib import Path
from typing import Annotated, Optional

import typer

from commands.common import exit_on_error
from dependencies import get_representor, get_steering_service, resolve_output_dir
from models import load_scenario


def solve(
        config: Annotated[Path, typer.Option("--config", "-c", help="Scenario TOML file")],
        out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory")] = None,
        iters: Annotated[Optional[int], typer.Option("--iters", min=1, help="Override scp.max_iterations")] = None,
        dump_program: Annotated[bool, typer.Option("--dump-program", help="Write each conic program as text")] = False,
):
    """Optimise a feedback policy for a scenario; writes policy.json and iterations.jsonl."""
    with exit_on_error():
        scenario = load_scenario(config)
        service = get_steering_service(resolve_output_dir(out, scenario))
        result = service.solve(scenario, iterations=iters, dump_program=dump_program)
        get_representor().iterations(result)
