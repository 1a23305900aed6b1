"""Adaptive-moment optimizer over a ParameterStore."""

from __future__ import annotations

import numpy as np

from pledgespec.diffcore.tape import ParameterStore


class NonFiniteGradientError(RuntimeError):
    """Raised when a gradient buffer contains NaN/inf; training must abort."""


class Adam:
    """Standard Adam with bias correction; hyperparameters are the de facto
    defaults and are recorded in run metadata by the trainer."""

    def __init__(self, store: ParameterStore, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(v.value) for k, v in store.items()}
        self._v = {k: np.zeros_like(v.value) for k, v in store.items()}

    def step(self) -> None:
        """Apply one update from the store's gradient buffers."""
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.store.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(
                    f"non-finite gradient in parameter {name!r} at step {self.t}"
                )
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
