"""Trajectory CSV files with a JSON metadata sidecar."""

import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import pandas as pd

from ..sim import Trajectory

FORMAT_VERSION = 1


def _indexed(prefix: str, count: int) -> List[str]:
    return [f"{prefix}{i + 1}" for i in range(count)]


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """Columns ``t,x1..,y1..,y_noisy1..,u1..,xi1..,xhat1..,err_norm``.

    Columns are indexed rather than named after model variables; the
    sidecar maps the indices back to names.
    """
    blocks = [
        pd.DataFrame({"t": traj.times}),
        pd.DataFrame(traj.x, columns=_indexed("x", traj.x.shape[1])),
        pd.DataFrame(traj.y, columns=_indexed("y", traj.y.shape[1])),
        pd.DataFrame(traj.y_noisy, columns=_indexed("y_noisy", traj.y_noisy.shape[1])),
    ]
    if traj.u.size:
        blocks.append(pd.DataFrame(traj.u, columns=_indexed("u", traj.u.shape[1])))
    blocks.append(pd.DataFrame(traj.xi, columns=_indexed("xi", traj.xi.shape[1])))
    blocks.append(pd.DataFrame(traj.xhat, columns=_indexed("xhat", traj.xhat.shape[1])))
    blocks.append(pd.DataFrame({"err_norm": traj.err}))
    return pd.concat(blocks, axis=1)


def column_names(traj: Trajectory) -> Dict[str, str]:
    """Indexed CSV column to model variable, for every column with a model name."""
    mapping: Dict[str, str] = {}
    for prefixes, names in ((("x", "xhat"), traj.x_names), (("y", "y_noisy"), traj.y_names), (("u",), traj.u_names)):
        for prefix in prefixes:
            mapping.update(zip(_indexed(prefix, len(names)), names))
    return mapping


def write_trajectory_csv(traj: Trajectory, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(traj).to_csv(path, index=False, float_format="%.10g")
    return path


def write_trajectory_metadata(
    traj: Trajectory,
    path: Path,
    config: Optional[Mapping[str, Any]] = None,
    seed: int = 0,
    spec_digest: Optional[str] = None,
) -> Path:
    """Sidecar next to the CSV: config, seed, spec digest and how the run ended."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {
        "format_version": FORMAT_VERSION,
        "observer": traj.observer,
        "seed": seed,
        "spec_digest": spec_digest,
        "samples": len(traj),
        "final_time": float(traj.times[-1]) if len(traj) else 0.0,
        "exit_reason": traj.exit_reason,
        "columns": column_names(traj),
        "final_error": float(traj.err[-1]) if len(traj) else None,
        "config": dict(config or {}),
        "metadata": {k: v for k, v in traj.metadata.items() if isinstance(v, (str, int, float, bool, type(None)))},
    }
    path.write_text(json.dumps(data, indent=2, default=str))
    return path
