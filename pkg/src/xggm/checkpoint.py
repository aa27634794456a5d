"""Named-matrix JSON checkpoints.

Each parameter is stored as ``{rows, cols, shape, data}`` with ``data`` the
row-major values.  Stacks of per-node matrices flatten to ``rows = N_o * d``;
``shape`` restores the original layout.  Python's float repr round-trips
exactly, so a save/load cycle is bitwise.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import atomic_write
from .errors import ConfigError


def matrix_entry(arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype=np.float64)
    shape = list(a.shape)
    cols = shape[-1] if a.ndim else 1
    rows = int(a.size // cols) if cols else 0
    return {"rows": rows, "cols": cols, "shape": shape, "data": a.reshape(-1).tolist()}


def entry_to_array(entry: dict) -> np.ndarray:
    data = np.array(entry["data"], dtype=np.float64)
    if data.size != entry["rows"] * entry["cols"]:
        raise ConfigError(f"checkpoint entry has {data.size} values, expected {entry['rows']}x{entry['cols']}")
    return data.reshape(entry.get("shape", [entry["rows"], entry["cols"]]))


def dumps(params: dict[str, np.ndarray], meta: dict | None = None) -> str:
    doc = {"meta": meta or {}, "params": {k: matrix_entry(v) for k, v in sorted(params.items())}}
    return json.dumps(doc, sort_keys=True) + "\n"


def loads(text: str) -> tuple[dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(text)
        params = {k: entry_to_array(v) for k, v in doc["params"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed checkpoint: {exc}") from exc
    return params, doc.get("meta", {})


def save(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    atomic_write(Path(path), dumps(params, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_text(encoding="utf-8"))
