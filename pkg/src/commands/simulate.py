from pathlib import Path
from typing import Annotated, Optional

import typer

from commands.common import exit_on_error
from dependencies import get_representor, get_steering_service, resolve_output_dir
from models import load_scenario


def simulate(
        policy: Annotated[Path, typer.Option("--policy", "-p", help="Policy JSON written by solve")],
        config: Annotated[Path, typer.Option("--config", "-c", help="Scenario TOML file")],
        out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory")] = None,
        trials: Annotated[Optional[int], typer.Option("--trials", min=1, help="Number of Monte Carlo trials")] = None,
        seed: Annotated[Optional[int], typer.Option("--seed", min=0, help="Master random seed")] = None,
        open_loop: Annotated[bool, typer.Option("--open-loop", help="Zero gains, nominal controls")] = False,
        trajectories: Annotated[bool, typer.Option("--trajectories", help="Also write trajectories.csv")] = False,
):
    """Closed-loop Monte Carlo of a policy; writes report.json and prints a summary."""
    with exit_on_error():
        scenario = load_scenario(config)
        service = get_steering_service(resolve_output_dir(out, scenario))
        feedback = service.repository.load_policy(policy)
        report = service.simulate(scenario, feedback, trials=trials, seed=seed, open_loop=open_loop,
                                  trajectories=trajectories)
        get_representor().report(report)
