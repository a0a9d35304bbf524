"""Losses and evaluation metrics."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

BCE_EPS = 1e-7


def bce_loss(pred: Tensor, target) -> Tensor:
    """Binary cross entropy, averaged over the batch; pred clamped to [eps, 1-eps]."""
    y = np.asarray(target, dtype=np.float64)
    if y.size == 0:
        raise ValueError("bce_loss: empty input")
    p = pred.clip(BCE_EPS, 1.0 - BCE_EPS)
    return -(Tensor(y) * p.log() + Tensor(1.0 - y) * (1.0 - p).log()).mean()


def mse_loss(pred: Tensor, target) -> Tensor:
    y = np.asarray(target, dtype=np.float64)
    if y.size == 0:
        raise ValueError("mse_loss: empty input")
    d = pred - Tensor(y)
    return (d * d).mean()


def mape(pred, target, min_target: float = 1.0) -> tuple[float, int]:
    """Mean absolute percentage error over targets >= `min_target` km/h.

    Returns (percentage, number of excluded near-zero targets).
    """
    p = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"mape: shape mismatch {p.shape} vs {y.shape}")
    if y.size == 0:
        raise ValueError("mape: empty input")
    keep = y >= min_target
    excluded = int(y.size - keep.sum())
    if not keep.any():
        raise ValueError("mape: every target below the exclusion floor")
    value = 100.0 * float(np.mean(np.abs(p[keep] - y[keep]) / y[keep]))
    return value, excluded


def precision_recall_f1(pred_labels, true_labels) -> tuple[float, float, float]:
    p = np.asarray(pred_labels).astype(bool).ravel()
    y = np.asarray(true_labels).astype(bool).ravel()
    if p.shape != y.shape:
        raise ValueError(f"f1: shape mismatch {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("f1: empty input")
    tp = float(np.sum(p & y))
    fp = float(np.sum(p & ~y))
    fn = float(np.sum(~p & y))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def f1_score(pred_labels, true_labels) -> float:
    return precision_recall_f1(pred_labels, true_labels)[2]
