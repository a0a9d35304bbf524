"""Named parameter collections and the Adam optimizer."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ModelParams:
    """Flat collection of named trainable tensors.

    Iteration order is always lexicographic by name so that optimizer state,
    serialization and gradient checks are deterministic.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"parameter '{name}' already registered")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        for name in self.names():
            yield name, self._tensors[name]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) ^ set(state)
        if missing:
            raise ValueError(f"parameter names do not match checkpoint: {sorted(missing)}")
        for name, values in state.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != self._tensors[name].data.shape:
                raise ValueError(
                    f"parameter '{name}': shape {arr.shape} != expected {self._tensors[name].data.shape}")
            self._tensors[name].data = arr.copy()


class Adam:
    """Standard bias-corrected Adam; one shared step counter for all parameters."""

    def __init__(self, params: ModelParams, lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"adam: non-finite gradient for parameter '{name}'")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
