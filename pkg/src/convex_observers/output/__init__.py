"""Output formatters for convex-observers."""

from .rich_output import RichOutput
from .json_output import format_benchmark_report, format_check_reports, format_manifest, format_synthesis_report
from .markdown_output import format_checks_markdown
from .csv_output import column_names, trajectory_frame, write_trajectory_csv, write_trajectory_metadata

__all__ = [
    "RichOutput",
    "format_synthesis_report",
    "format_check_reports",
    "format_benchmark_report",
    "format_manifest",
    "format_checks_markdown",
    "column_names",
    "trajectory_frame",
    "write_trajectory_csv",
    "write_trajectory_metadata",
]
