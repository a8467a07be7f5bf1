"""ObserverSpec files: JSON with polynomials as strings.

Polynomial specs embed the model and the transformation. Specs with
closed-form pieces reference their benchmark by name and parameters and are
rebuilt on load.
"""

import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .benchmarks import BenchmarkError, benchmark
from .model import (
    AffineTransformation,
    AugmentedModel,
    ModelError,
    PolynomialField,
    PolynomialTransformation,
    SystemModel,
    model_from_dict,
    model_to_dict,
)
from .poly import PolyMatrix, Polynomial, PolynomialError
from .synth import AugmentationRecord, InverseStrategy, ObserverSpec

FORMAT_VERSION = 1

Model = Union[SystemModel, AugmentedModel]


class SpecFileError(Exception):
    """Unreadable, unsupported or unserializable spec file."""
    pass


def _matrix(a: np.ndarray) -> list:
    return np.asarray(a, dtype=float).tolist()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def _embeddable(spec: ObserverSpec, model: Optional[Model]) -> bool:
    if model is None:
        return False
    if not isinstance(spec.f_z, PolynomialField) or spec.transformation.symbolic() is None:
        return False
    if callable(spec.metric):
        t = spec.transformation
        if not (isinstance(t, AffineTransformation) and t.P_poly is not None and t.P_const is None):
            return False
    if isinstance(model, AugmentedModel):
        return model.base.is_polynomial and isinstance(model.f_w, PolynomialField) and not callable(model.M_w)
    return model.is_polynomial


def _transformation_dict(spec: ObserverSpec) -> Dict[str, Any]:
    t = spec.transformation
    data: Dict[str, Any] = {"states": list(t.x_names), "outputs": list(t.y_names)}
    if isinstance(t, AffineTransformation):
        data["kind"] = "affine"
        if t.P_const is not None:
            data["P"] = _matrix(t.P_const)
        else:
            data["P"] = [[str(t.P_poly[i, j]) for j in range(t.dim)] for i in range(t.dim)]
        data["varphi"] = [str(p) for p in t.varphi_polys]
    else:
        data["kind"] = "polynomial"
        data["phi"] = [str(p) for p in t.symbolic()]
    return data


def _model_dict(model: Model) -> Dict[str, Any]:
    if isinstance(model, AugmentedModel):
        return {
            "kind": "augmented",
            "base": model_to_dict(model.base),
            "w_names": list(model.w_names),
            "f_w": [str(p) for p in model.f_w.polys],
            "M_w": _matrix(model.M_w),
            "rate_w": model.rate_w,
            "w_box": {k: list(v) for k, v in model.w_box.items()},
        }
    return {"kind": "system", **model_to_dict(model)}


def dump_spec(spec: ObserverSpec, model: Optional[Model] = None) -> Dict[str, Any]:
    """
    Serializable mapping for an ObserverSpec.

    Args:
        spec: Observer to write
        model: Plant the observer was built for; required unless the spec is benchmark-tagged

    Returns:
        Mapping ready for ``json.dumps``

    Raises:
        SpecFileError: If the spec has closed-form pieces and no benchmark reference
    """
    data: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "name": spec.name,
        "model_name": spec.model_name,
        "rate": spec.rate,
        "margin": spec.margin,
        "mode": spec.mode,
        "inverse": spec.inverse.value,
        "q_floor": spec.q_floor,
        "r": spec.r,
        "theta": {k: float(v) for k, v in spec.theta.items()},
        "metadata": _jsonable(spec.metadata),
    }
    if _embeddable(spec, model):
        data["kind"] = "polynomial"
        data["model"] = _model_dict(model)
        data["transformation"] = _transformation_dict(spec)
        data["f_z"] = [str(p) for p in spec.f_z.polys]
        if callable(spec.metric):
            data["metric"] = {"kind": "inverse_P"}
        else:
            data["metric"] = {"kind": "constant", "matrix": _matrix(spec.metric)}
        if spec.certificate_P is not None:
            data["certificate_P"] = _matrix(spec.certificate_P)
        if spec.augmentation is not None:
            data["augmentation"] = {
                "w_names": list(spec.augmentation.w_names),
                "base_x_names": list(spec.augmentation.base_x_names),
                "rate_w": spec.augmentation.rate_w,
            }
        return data
    ref = spec.metadata.get("benchmark")
    if not ref:
        raise SpecFileError(
            f"Spec '{spec.name}' has closed-form pieces and no benchmark reference; it cannot be written to a file"
        )
    data["kind"] = "benchmark"
    data["benchmark"] = {"name": ref["name"], "params": dict(ref.get("params", {}))}
    return data


def _parse_list(items: Any, what: str):
    try:
        return [Polynomial.parse(str(s)) for s in items]
    except PolynomialError as e:
        raise SpecFileError(f"Bad polynomial in {what}: {e}") from e


def _load_model(data: Dict[str, Any]) -> Model:
    kind = data.get("kind", "system")
    try:
        if kind == "augmented":
            base = model_from_dict(data["base"])
            w_names = tuple(data["w_names"])
            names = base.x_names + w_names
            f_w = PolynomialField(_parse_list(data["f_w"], "f_w"), names, base.y_names, base.u_names)
            return AugmentedModel(
                base=base,
                f_w=f_w,
                w_names=w_names,
                M_w=np.asarray(data["M_w"], dtype=float),
                rate_w=float(data["rate_w"]),
                w_box={k: (float(v[0]), float(v[1])) for k, v in (data.get("w_box") or {}).items()},
            )
        if kind == "system":
            return model_from_dict(data)
    except (KeyError, ModelError) as e:
        raise SpecFileError(f"Bad model in spec file: {e}") from e
    raise SpecFileError(f"Unknown model kind '{kind}'")


def _load_transformation(data: Dict[str, Any]):
    x_names, y_names = data["states"], data["outputs"]
    if data.get("kind") == "affine":
        P_raw = data["P"]
        if P_raw and isinstance(P_raw[0][0], str):
            P: Any = PolyMatrix([_parse_list(row, "P") for row in P_raw])
        else:
            P = np.asarray(P_raw, dtype=float)
        return AffineTransformation(x_names, y_names, P, _parse_list(data["varphi"], "varphi"))
    return PolynomialTransformation(x_names, y_names, _parse_list(data["phi"], "phi"))


def _metric_from_P(t: AffineTransformation):
    def metric(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.linalg.inv(t.P(y))

    return metric


def spec_from_dict(data: Dict[str, Any]) -> Tuple[ObserverSpec, Model]:
    """
    Raises:
        SpecFileError: On a version mismatch, unknown kind or malformed content
    """
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise SpecFileError(f"Unsupported format_version {version}; expected {FORMAT_VERSION}")
    kind = data.get("kind")
    if kind == "benchmark":
        ref = data.get("benchmark") or {}
        try:
            bench = benchmark(ref["name"], ref.get("params"))
        except (KeyError, BenchmarkError) as e:
            raise SpecFileError(f"Bad benchmark reference: {e}") from e
        return bench.spec, bench.model
    if kind != "polynomial":
        raise SpecFileError(f"Unknown spec kind '{kind}'")
    try:
        model = _load_model(data["model"])
        t = _load_transformation(data["transformation"])
        base = model.base if isinstance(model, AugmentedModel) else model
        f_z = PolynomialField(_parse_list(data["f_z"], "f_z"), t.x_names, t.y_names, base.u_names)
        metric_data = data["metric"]
        if metric_data["kind"] == "inverse_P":
            metric: Any = _metric_from_P(t)
        else:
            metric = np.asarray(metric_data["matrix"], dtype=float)
        aug = data.get("augmentation")
        spec = ObserverSpec(
            name=data["name"],
            model_name=data.get("model_name", base.name),
            transformation=t,
            f_z=f_z,
            metric=metric,
            rate=float(data["rate"]),
            margin=float(data.get("margin", 0.0)),
            mode=data.get("mode", "h3"),
            inverse=InverseStrategy(data.get("inverse", InverseStrategy.AFFINE.value)),
            certificate_P=np.asarray(data["certificate_P"], dtype=float) if "certificate_P" in data else None,
            q_floor=float(data.get("q_floor", 1e-3)),
            r=data.get("r"),
            augmentation=AugmentationRecord(
                w_names=tuple(aug["w_names"]), base_x_names=tuple(aug["base_x_names"]), rate_w=float(aug["rate_w"])
            ) if aug else None,
            theta=dict(data.get("theta", {})),
            metadata=dict(data.get("metadata", {})),
        )
    except (KeyError, ValueError, ModelError) as e:
        raise SpecFileError(f"Malformed spec file: {e}") from e
    return spec, model


def write_spec(spec: ObserverSpec, path: Path, model: Optional[Model] = None) -> Dict[str, Any]:
    data = dump_spec(spec, model)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2))
    print(f"[specfile] Wrote {data['kind']} spec '{spec.name}' to {path}", file=sys.stderr)
    return data


def load_spec(path: Path) -> Tuple[ObserverSpec, Model]:
    """
    Read a spec file.

    Args:
        path: JSON file written by ``write_spec``

    Returns:
        The observer and the plant it was built for

    Raises:
        SpecFileError: If the file is missing, not JSON, or malformed
    """
    path = Path(path)
    if not path.exists():
        raise SpecFileError(f"Spec file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SpecFileError(f"Invalid JSON in {path}: {e}") from e
    spec, model = spec_from_dict(data)
    print(f"[specfile] Loaded {data['kind']} spec '{spec.name}' from {path}", file=sys.stderr)
    return spec, model


def spec_digest(spec: ObserverSpec, model: Optional[Model] = None) -> str:
    """sha256 of the canonical JSON form."""
    payload = json.dumps(dump_spec(spec, model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()
