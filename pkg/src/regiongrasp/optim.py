"""Decoupled-weight-decay adaptive-moment optimizer and cosine LR schedule."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


class AdamW:
    """AdamW over a name->Tensor parameter dict."""

    def __init__(self, params: dict, lr: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[k]
            v = self._v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine decay from lr0 to lr_min over total_steps."""
    if total_steps <= 1:
        return lr0
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_min + 0.5 * (1.0 + math.cos(math.pi * frac)) * (lr0 - lr_min)
