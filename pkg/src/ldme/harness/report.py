"""JSON reports with a fixed schema."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import jsonschema
import numpy as np

SCHEMA_VERSION = 1

_num = {"type": "number"}
_opt_num = {"type": ["number", "null"]}

REPORT_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ldme report",
    "type": "object",
    "required": ["schema_version", "task", "params", "hypotheses", "list_size", "min_error", "accuracy", "layer_stats", "wall_time_ms", "warnings"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "task": {"enum": ["estimate", "robust-mean", "cluster"]},
        "model": {"type": "string"},
        "params": {"type": "object"},
        "gen": {"type": ["object", "null"]},
        "hypotheses": {"type": "array", "items": {"type": "array", "items": _num}},
        "list_size": {"type": "integer", "minimum": 0},
        "min_error": _opt_num,
        "component_errors": {"type": "array", "items": _num},
        "accuracy": _opt_num,
        "n_labels": {"type": "integer", "minimum": 0},
        "unlabeled": {"type": "integer", "minimum": 0},
        "layer_stats": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["depth", "nodes", "total_size", "max_size", "size_potential", "pruned"],
                "properties": {
                    "depth": {"type": "integer"},
                    "nodes": {"type": "integer"},
                    "total_size": {"type": "integer"},
                    "max_size": {"type": "integer"},
                    "size_potential": _num,
                    "pruned": {"type": "integer"},
                },
            },
        },
        "wall_time_ms": _num,
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}


class ReportError(ValueError):
    pass


def _finite_check(obj: Any, where: str = "report") -> None:
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ReportError(f"non-finite number at {where}")
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _finite_check(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _finite_check(v, f"{where}[{i}]")


def _plain(x: Any) -> Any:
    """Convert numpy scalars and arrays to JSON-native values."""
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


@dataclass
class Report:
    task: str
    params: Dict[str, Any]
    hypotheses: List[List[float]] = field(default_factory=list)
    min_error: Optional[float] = None
    accuracy: Optional[float] = None
    layer_stats: List[Dict[str, Any]] = field(default_factory=list)
    wall_time_ms: float = 0.0
    warnings: List[str] = field(default_factory=list)
    model: Optional[str] = None
    gen: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "params": _plain(self.params),
            "hypotheses": _plain(self.hypotheses),
            "list_size": len(self.hypotheses),
            "min_error": None if self.min_error is None or not math.isfinite(self.min_error) else float(self.min_error),
            "accuracy": None if self.accuracy is None else float(self.accuracy),
            "layer_stats": _plain(self.layer_stats),
            "wall_time_ms": float(self.wall_time_ms),
            "warnings": [str(w) for w in self.warnings],
        }
        if self.model is not None:
            out["model"] = self.model
        if self.gen is not None:
            out["gen"] = _plain(self.gen)
        out.update(_plain(self.extra))
        validate_report(out)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def validate_report(obj: Dict[str, Any]) -> None:
    """Schema check plus the finiteness rule (JSON Schema cannot express it)."""
    try:
        jsonschema.validate(obj, REPORT_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ReportError(f"report field {path}: {e.message}") from None
    _finite_check(obj)
