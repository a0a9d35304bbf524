"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .optim import ModelParams
from .tensor import Tensor


def gradient_check(loss_fn: Callable[[], Tensor], params: ModelParams,
                   h: float = 1e-5) -> dict[str, float]:
    """Compare backprop gradients of a scalar loss against central differences.

    `loss_fn` must be a deterministic closure over `params` (run recurrent
    models in eval mode: a resampled dropout mask between the two half-steps
    would corrupt the difference quotient). Returns the relative error
    ||g_fd - g_bp|| / max(||g_fd||, ||g_bp||) per parameter.
    """
    params.zero_grad()
    loss = loss_fn()
    if loss.data.size != 1:
        raise ValueError("gradient_check: loss must be scalar")
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.items()}

    report: dict[str, float] = {}
    for name, t in params.items():
        numeric = np.zeros_like(t.data)
        flat = t.data.ravel()
        num_flat = numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * h)
        g = analytic[name]
        scale = max(np.linalg.norm(numeric), np.linalg.norm(g))
        if scale < 1e-12:
            report[name] = 0.0
        else:
            report[name] = float(np.linalg.norm(numeric - g) / scale)
    return report


def max_relative_error(report: dict[str, float]) -> float:
    return max(report.values()) if report else 0.0
