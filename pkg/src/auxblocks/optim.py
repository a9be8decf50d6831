"""SGD with momentum, weight decay, and a multi-step learning-rate schedule.

Update rule (decoupled-free, decay folded into the gradient):

    v <- momentum * v + g + weight_decay * w
    w <- w - lr(epoch) * v

lr(epoch) is the base rate times the product of every schedule multiplier
whose epoch threshold has been reached.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .tensor import Tensor


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, momentum: float = 0.0,
                 weight_decay: float = 0.0, schedule: Sequence[Tuple[int, float]] = ()):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = sorted(schedule)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for threshold, factor in self.schedule:
            if epoch >= threshold:
                lr *= factor
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, epoch: int = 0) -> None:
        lr = self.lr_at(epoch)
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v
