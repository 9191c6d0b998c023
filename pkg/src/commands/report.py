from pathlib import Path
from typing import Annotated, Optional

import typer

from commands.common import exit_on_error
from dependencies import get_representor, get_steering_service, resolve_output_dir


def report(
        report_path: Annotated[Path, typer.Option("--report", "-r", help="Report JSON written by simulate")],
        out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory")] = None,
        prefix: Annotated[str, typer.Option("--prefix", help="File name prefix for the tables")] = "",
):
    """Turn a Monte Carlo report into plot-ready CSV tables."""
    with exit_on_error():
        service = get_steering_service(resolve_output_dir(out if out is not None else report_path.parent))
        written = service.report(service.repository.load_report(report_path), prefix=prefix)
        get_representor().written(written)
