import logging
from typing import Annotated, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler

import config
from commands import report, sample_field, simulate, solve

app = typer.Typer(
    help="Covariance steering in Gaussian random fields: solve, simulate, report.",
    no_args_is_help=True,
    add_completion=False,
)


@app.callback()
def setup(
        log_level: Annotated[Optional[str], typer.Option("--log-level", help="Overrides GRF_STEER_LOG_LEVEL")] = None,
):
    logging.basicConfig(
        level=(log_level or config.LOG_LEVEL).upper(),
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


# Register commands
app.command("solve")(solve.solve)
app.command("simulate")(simulate.simulate)
app.command("report")(report.report)
app.command("sample-field")(sample_field.sample_field)


if __name__ == "__main__":
    app()
