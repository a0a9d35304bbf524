"""Versioned JSON checkpoints for named parameter tensors.

Tensors are written in lexicographic name order with full round-trip float
precision, so identical parameters always serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import ModelParams

FORMAT = "digcnet-params-v1"


def save_params(path, params: ModelParams, meta: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
            for name, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as {name: array} plus its metadata dict."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {doc.get('format')!r}")
    tensors = {}
    for name, spec in doc["tensors"].items():
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        tensors[name] = arr
    return tensors, doc.get("meta", {})
