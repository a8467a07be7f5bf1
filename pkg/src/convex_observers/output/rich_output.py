"""Rich terminal output for synthesis, verification and simulation results."""

from typing import Any, Mapping, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from ..sim import RateFit, Trajectory
from ..synth import SynthesisResult
from ..verify import CheckReport, CheckStatus, overall_status

_STATUS_STYLE = {
    CheckStatus.PASS: "green",
    CheckStatus.BOUNDARY: "yellow",
    CheckStatus.FAIL: "red",
}


def _matrix_text(a: Optional[np.ndarray]) -> str:
    if a is None:
        return "-"
    return np.array2string(np.asarray(a, dtype=float), precision=4, suppress_small=True)


class RichOutput:
    """Rich terminal output handler."""

    def __init__(self, console: Console = None, quiet: bool = False):
        self.console = console or Console()
        self.quiet = quiet

    def show_progress(self, message: str):
        if self.quiet:
            return
        self.console.print(f"[bold blue]{message}[/]")

    def show_synthesis(self, result: SynthesisResult):
        """Show the synthesis verdict with theta, P and margins."""
        style = "green" if result.feasible else "red"
        lines = [
            f"[bold]Status:[/] [{style}]{result.status.value}[/]",
            f"[bold]Rate:[/] {result.rate}",
        ]
        if result.r is not None:
            lines.append(f"[bold]r:[/] {result.r}")
        if result.largest_feasible_rate is not None:
            lines.append(f"[bold]Largest feasible rate:[/] {result.largest_feasible_rate:.6g}")
        if result.reason:
            lines.append(f"[bold]Reason:[/] {result.reason}")
        lines.append(f"[dim]Solved in {result.timing:.2f}s[/]")
        self.console.print(Panel("\n".join(lines), title="[bold]Synthesis[/]", border_style=style))

        spec = result.spec
        if spec is not None:
            self.console.print(Panel(_matrix_text(spec.certificate_P), title="P", border_style="blue"))
            phi = spec.transformation.symbolic() or []
            table = Table(title="Observer", show_header=True)
            table.add_column("i", style="cyan", justify="right")
            table.add_column("phi_i", style="white")
            table.add_column("f_z,i", style="white")
            for i, p in enumerate(phi):
                fz = spec.f_z.polys[i] if hasattr(spec.f_z, "polys") else "closed form"
                table.add_row(str(i + 1), str(p), str(fz))
            self.console.print(table)

        if result.margins and not self.quiet:
            table = Table(title="Gram eigenvalue margins", show_header=True)
            table.add_column("Block", style="cyan")
            table.add_column("Min eigenvalue", style="green", justify="right")
            for label, value in result.margins.items():
                table.add_row(label, f"{value:.3e}")
            self.console.print(table)

    def show_checks(self, reports: Sequence[CheckReport], title: str = "Verification"):
        table = Table(title=title, show_header=True)
        table.add_column("Condition", style="cyan")
        table.add_column("Status")
        table.add_column("Worst margin", justify="right")
        table.add_column("Samples", justify="right")
        table.add_column("Worst point", style="dim")
        for r in reports:
            style = _STATUS_STYLE[r.status]
            point = ", ".join(f"{k}={v:.3g}" for k, v in r.worst_point.items())
            table.add_row(r.condition, f"[{style}]{r.status.value}[/]", f"{r.worst_margin:.3e}", str(r.samples), point)
        self.console.print(table)
        overall = overall_status(reports)
        self.console.print(f"[bold]Overall:[/] [{_STATUS_STYLE[overall]}]{overall.value}[/]")

    def show_simulation(self, traj: Trajectory, fit: Optional[RateFit] = None, files: Sequence[Any] = ()):
        """Show final error, rms error and the fitted decay rate."""
        lines = [
            f"[bold]Observer:[/] {traj.observer}",
            f"[bold]Samples:[/] {len(traj)} up to t={traj.times[-1]:.4g}",
            f"[bold]Final error:[/] {traj.err[-1]:.3e}",
            f"[bold]RMS error (second half):[/] {traj.rms_error(traj.times[-1] / 2):.3e}",
        ]
        if fit is not None:
            lines.append(f"[bold]Fitted decay rate:[/] {fit.rate:.4g} (R^2 {fit.r_squared:.3f})")
        if traj.exited:
            lines.append(f"[yellow]Run stopped early: {traj.exit_reason}[/]")
        for f in files:
            lines.append(f"[dim]Wrote {f}[/]")
        self.console.print(Panel("\n".join(lines), title="[bold]Simulation[/]", border_style="blue"))

    def show_benchmark(self, name: str, reports: Sequence[CheckReport], summary: Mapping[str, Any]):
        self.console.rule(f"[bold green]{name}[/]", style="green")
        self.show_checks(reports, title=f"{name} checks")
        table = Table(title=f"{name} simulation", show_header=True)
        table.add_column("Quantity", style="cyan")
        table.add_column("Value", style="white", justify="right")
        for key, value in summary.items():
            table.add_row(key, f"{value:.4g}" if isinstance(value, float) else str(value))
        self.console.print(table)

    def show_warning(self, message: str):
        self.console.print(f"[bold yellow]Warning:[/] {message}")

    def show_error(self, message: str):
        """Show error message."""
        self.console.print(f"[bold red]Error:[/] {message}")
