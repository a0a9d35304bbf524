"""Deterministic RNG fan-out, hashing, and canonical serialization helpers.

Every random draw in the pipeline flows from a single root seed through
``rng_for(seed, label)``.  Labels are stable strings, so adding a new
consumer never perturbs the streams of existing ones.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one named consumer of the root seed."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *words]))


def derived_seed(seed: int, label: str) -> int:
    """Stable integer sub-seed for components that take a plain int."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def canonical_json(obj: object) -> str:
    """JSON with sorted keys and repr-exact floats, for hashing and artifacts."""
    return json.dumps(obj, sort_keys=True, indent=1, default=_json_default)


def _json_default(obj: object) -> object:
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_float(value: float) -> str:
    """Shortest round-trip decimal form; stable across runs."""
    return repr(float(value))
