"""Small helpers for the JSON envelopes used by model and result files."""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError


def pack_array(a: np.ndarray, dtype: str = "<f4") -> dict[str, Any]:
    a = np.ascontiguousarray(a, dtype=dtype)
    return {
        "dtype": np.dtype(dtype).str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def unpack_array(obj: dict[str, Any], as_dtype=np.float64) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"])
        a = np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad embedded array: {exc}") from exc
    return a.astype(as_dtype)


def dumps(obj: Any) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj: Any, path: str | Path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
