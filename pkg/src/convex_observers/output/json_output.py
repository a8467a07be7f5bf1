"""JSON output formatter."""

import json
import math
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np

from ..synth import SynthesisResult
from ..verify import CheckReport, overall_status

FORMAT_VERSION = 1


def _finite(value: Any) -> Any:
    """JSON has no inf/nan; write them as strings."""
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    if isinstance(value, np.ndarray):
        return _finite(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        return _finite(value.item())
    return value


def synthesis_summary(result: SynthesisResult, timing: Optional[float] = None) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "status": result.status.value,
        "rate": result.rate,
        "largest_feasible_rate": result.largest_feasible_rate,
        "r": result.r,
        "theta": {result.theta_labels.get(k, k): float(v) for k, v in result.theta.items()},
        "eigenvalue_margins": dict(result.margins),
        "solver": dict(result.stats),
        "timing": result.timing if timing is None else timing,
        "reason": result.reason,
    }
    spec = result.spec
    if spec is not None:
        data["observer"] = {
            "name": spec.name,
            "mode": spec.mode,
            "P": spec.certificate_P,
            "phi": [str(p) for p in spec.transformation.symbolic() or []],
            "f_z": [str(p) for p in getattr(spec.f_z, "polys", [])],
        }
    if result.certificate is not None:
        data["certificate"] = {"violation": result.certificate.violation}
    return data


def format_synthesis_report(result: SynthesisResult, timing: Optional[float] = None) -> str:
    """
    Format a synthesis result as JSON.

    Args:
        result: Outcome of ``synthesize``
        timing: Wall time to report instead of the result's own

    Returns:
        JSON string
    """
    return json.dumps(_finite({"format_version": FORMAT_VERSION, **synthesis_summary(result, timing)}), indent=2)


def format_check_reports(reports: Sequence[CheckReport], context: Optional[Mapping[str, Any]] = None) -> str:
    return json.dumps(_finite({
        "format_version": FORMAT_VERSION,
        "overall": overall_status(reports).value,
        "context": dict(context or {}),
        "checks": [r.to_dict() for r in reports],
    }), indent=2)


def format_benchmark_report(
    name: str,
    reports: Sequence[CheckReport],
    simulation: Mapping[str, Any],
    params: Mapping[str, float],
) -> str:
    return json.dumps(_finite({
        "format_version": FORMAT_VERSION,
        "benchmark": name,
        "params": dict(params),
        "overall": overall_status(reports).value,
        "checks": [r.to_dict() for r in reports],
        "simulation": dict(simulation),
    }), indent=2)


def format_manifest(manifest: Mapping[str, Any]) -> str:
    """Run manifest: command, config, seed, outputs and exit code."""
    return json.dumps(_finite({"format_version": FORMAT_VERSION, **dict(manifest)}), indent=2)
