"""Markdown output formatter."""

from typing import Optional, Sequence

from ..verify import CheckReport, overall_status


def _point(point) -> str:
    if not point:
        return "-"
    return ", ".join(f"{k}={v:.4g}" for k, v in point.items())


def format_checks_markdown(reports: Sequence[CheckReport], title: Optional[str] = None) -> str:
    """
    Format verification reports as Markdown.

    Args:
        reports: Check outcomes in run order
        title: Heading, usually the observer name

    Returns:
        Markdown string
    """
    lines = []

    lines.append(f"# Verification: {title}\n" if title else "# Verification\n")
    lines.append(f"**Overall:** {overall_status(reports).value}\n")

    lines.append("| Condition | Status | Worst margin | Tolerance | Samples | Worst point |")
    lines.append("|-----------|--------|--------------|-----------|---------|-------------|")
    for r in reports:
        lines.append(
            f"| {r.condition} | {r.status.value} | {r.worst_margin:.3e} | {r.tolerance:.1e} "
            f"| {r.samples} | {_point(r.worst_point)} |"
        )
    lines.append("\n")

    notes = [r for r in reports if r.detail]
    if notes:
        lines.append("## Notes\n")
        for r in notes:
            lines.append(f"- **{r.condition}:** {r.detail}")
        lines.append("\n")

    return "\n".join(lines)
