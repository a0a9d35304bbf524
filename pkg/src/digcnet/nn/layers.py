"""Differentiable layers: dense, graph convolution, LSTM/RNN cells, dropout."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        return x
    if kind == "relu":
        return x.relu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    raise ValueError(f"unknown activation '{kind}'")


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Glorot init: uniform in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None, activation: str = "identity") -> Tensor:
    """act(x @ w + b). `x` may carry leading batch dimensions."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: inner dims disagree, x {x.shape} vs w {w.shape}")
    y = x @ w
    if b is not None:
        y = y + b
    return activate(y, activation)


def gcn_layer(l_norm, x: Tensor, theta: Tensor, activation: str = "relu") -> Tensor:
    """Graph convolution act(L @ x @ theta) with a fixed propagation matrix.

    `l_norm` is the (N, N) normalized propagation matrix (not trainable);
    `x` is (..., N, C) node features, `theta` the (C, F) filter matrix.
    Leading batch dimensions on `x` convolve every snapshot in one call.
    """
    l_norm = Tensor._wrap(l_norm)
    if l_norm.ndim != 2 or l_norm.shape[0] != l_norm.shape[1]:
        raise ValueError(f"gcn_layer: propagation matrix must be square, got {l_norm.shape}")
    if x.shape[-2] != l_norm.shape[0]:
        raise ValueError(f"gcn_layer: x has {x.shape[-2]} nodes, matrix has {l_norm.shape[0]}")
    if x.shape[-1] != theta.shape[0]:
        raise ValueError(f"gcn_layer: x channels {x.shape[-1]} vs theta {theta.shape}")
    return activate((l_norm @ x) @ theta, activation)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell step; gates packed [input, forget, candidate, output].

    x (1, D), h_prev/c_prev (1, H), wx (D, 4H), wh (H, 4H), b (4H,).
    """
    hidden = h_prev.shape[-1]
    if wx.shape != (x.shape[-1], 4 * hidden) or wh.shape != (hidden, 4 * hidden):
        raise ValueError(
            f"lstm_step: shapes x{x.shape} h{h_prev.shape} wx{wx.shape} wh{wh.shape} inconsistent")
    z = x @ wx + h_prev @ wh + b
    i = z[..., 0 * hidden:1 * hidden].sigmoid()
    f = z[..., 1 * hidden:2 * hidden].sigmoid()
    g = z[..., 2 * hidden:3 * hidden].tanh()
    o = z[..., 3 * hidden:4 * hidden].sigmoid()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c


def rnn_step(x: Tensor, h_prev: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Vanilla recurrent cell: h = tanh(x @ wx + h_prev @ wh + b)."""
    if wx.shape[0] != x.shape[-1] or wh.shape[0] != h_prev.shape[-1]:
        raise ValueError(
            f"rnn_step: shapes x{x.shape} h{h_prev.shape} wx{wx.shape} wh{wh.shape} inconsistent")
    return (x @ wx + h_prev @ wh + b).tanh()


def dropout(x: Tensor, keep_prob: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/keep_prob, eval is the identity."""
    if keep_prob <= 0.0 or keep_prob > 1.0:
        raise ValueError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an rng")
    mask = (rng.random(x.shape) < keep_prob) / keep_prob
    return x * mask
