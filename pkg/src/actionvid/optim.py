"""Adam optimizer with bias correction."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import Tensor


class MissingGradError(RuntimeError):
    """A parameter reached ``step`` without a populated gradient."""


class Adam:
    """Standard Adam update: p -= lr * m_hat / (sqrt(v_hat) + eps).

    Holds first/second moment buffers per parameter and a strictly
    increasing step counter. Gradients are left untouched by ``step``;
    the caller zeroes them (``zero_grad``) between accumulation rounds.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.5, 0.99), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2, t = self.beta1, self.beta2, self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                raise MissingGradError(f"parameter {name!r} has no gradient")
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
