from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"


def _float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    if text.lstrip("-").isdigit():
        text += ".0"
    return text


def dumps(value: Any, indent: int = 0) -> str:
    """JSON text with sorted keys, two-space indent and 17 significant digits per float."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(value, pd.DataFrame):
        value = value.to_dict(orient="records")
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, np.generic):
        value = value.item()
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{inner}{dumps(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise TypeError(f"Cannot write {type(value).__name__} to JSON.")


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps({"schema_version": SCHEMA_VERSION, **payload}) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> int:
    """Versioned CSV: leading schema_version column, no index, 17-digit floats."""
    path.parent.mkdir(parents=True, exist_ok=True)
    out = frame.copy()
    out.insert(0, "schema_version", SCHEMA_VERSION)
    out.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return len(out)


def error_payload(exc: BaseException) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "error": type(exc).__name__,
        "message": getattr(exc, "problem", str(exc)),
        "source": getattr(exc, "source", None),
        "line": getattr(exc, "line", None),
    }
