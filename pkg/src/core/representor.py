from pathlib import Path
from typing import Iterable

from rich.console import Console
from rich.table import Table

from monte_carlo import McReport
from scp_driver import ScpResult


def _fmt(value, digits: int = 6) -> str:
    return "-" if value is None else f"{value:.{digits}g}"


class Representor:
    """Renders pipeline results as rich tables on the terminal."""

    def __init__(self, console: Console, error_console: Console):
        self.console = console
        self.error_console = error_console

    def iterations(self, result: ScpResult) -> None:
        table = Table(title=f"SCP iterations ({result.status.value})")
        for column in ("iter", "status", "objective", "J1", "J2", "worst violation", "|du|", "nominal gap", "time [s]"):
            table.add_column(column, justify="right")
        for record in result.records:
            table.add_row(str(record.iteration), record.status, _fmt(record.objective), _fmt(record.j1),
                          _fmt(record.j2), _fmt(record.worst_violation, 3), _fmt(record.control_change, 3),
                          _fmt(record.nominal_gap, 3), f"{record.solve_time:.2f}")
        self.console.print(table)

    def report(self, report: McReport) -> None:
        self.console.print(f"Trials: {report.successful} successful, {report.failed} failed (seed {report.seed})")
        if report.violations:
            table = Table(title="Chance-constraint violations")
            for column in ("constraint", "allowed", "rate", "95% CI"):
                table.add_column(column, justify="right")
            for stat in report.violations:
                style = "red" if stat.ci_low > stat.allowed else None
                table.add_row(stat.name, f"{stat.allowed:.4g}", f"{stat.rate:.4g}",
                              f"[{stat.ci_low:.4g}, {stat.ci_high:.4g}]", style=style)
            self.console.print(table)
        if report.terminal_summary is not None:
            summaries = [(source, summary) for source, summary in (("monte carlo", report.terminal_summary),
                                                                   ("linear covariance", report.predicted_terminal))
                         if summary is not None]
            methods = ", ".join(f"{source}: {summary.method}" for source, summary in summaries)
            table = Table(title=f"Terminal functional (percentiles {methods})")
            table.add_column("source")
            for key in report.terminal_summary.percentiles:
                table.add_column(f"p{key}", justify="right")
            table.add_column("mean", justify="right")
            table.add_column("std", justify="right")
            for source, summary in summaries:
                table.add_row(source, *[_fmt(v) for v in summary.percentiles.values()], _fmt(summary.mean),
                              _fmt(summary.std))
            self.console.print(table)
        final_mean = report.state_mean[-1]
        self.console.print("Final state mean: " + ", ".join(
            f"{name}={value:.6g}" for name, value in zip(report.state_names, final_mean)))

    def written(self, paths: Iterable[Path]) -> None:
        for path in paths:
            self.console.print(f"wrote {path}")

    def error(self, message: str) -> None:
        self.error_console.print(f"[bold red]error:[/bold red] {message}")
