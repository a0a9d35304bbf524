"""Shared test helpers: independent finite-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def numeric_grad(
    value: Callable[[], float],
    arrays: Sequence[np.ndarray],
    h: float = 1e-6,
) -> list[np.ndarray]:
    """Central-difference gradient of ``value()`` w.r.t. each array, in place.

    ``value`` must recompute the scalar from the current contents of
    ``arrays``; entries are perturbed one at a time and restored.
    """
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr, dtype=np.float64)
        flat, gflat = arr.ravel(), grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = value()
            flat[i] = orig - h
            lo = value()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(grad)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm((a - b).ravel()) / denom)
