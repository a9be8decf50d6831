"""Adversarial training baseline: PGD inner maximization, SGD outer step.

Each minibatch is (fully or partially, per the mix ratio) replaced by PGD
adversarials crafted against the current parameters before the gradient
step. With epsilon zero and mix ratio one the parameter trajectory is
bit-identical to plain training under the same shuffle stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attacks import public_loss, _pgd_iterate
from .ensemble import minibatch_indices
from .models import Model
from .optim import SGD
from .tensor import cross_entropy


@dataclass
class ATConfig:
    epsilon: float = 0.2
    step_size: float = 0.02
    iterations: int = 5
    mix_ratio: float = 1.0     # fraction of each batch replaced by adversarials
    epochs: int = 5
    random_start: bool = False

    def __post_init__(self):
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ValueError("mix_ratio must be in [0, 1]")


def adv_train_epoch(model: Model, images: np.ndarray, labels: np.ndarray, optimizer: SGD,
                    config: ATConfig, rng: Optional[np.random.Generator] = None,
                    batch_size: int = 128, epoch: int = 0) -> dict:
    """One shuffled pass of min-max training on the public head."""
    if len(images) == 0:
        raise ValueError("empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    loss_sum = 0.0
    correct = 0
    for idx in minibatch_indices(rng, len(images), batch_size):
        xb, yb = images[idx].copy(), labels[idx]
        if config.mix_ratio >= 1.0:
            replace = slice(None)
            yb_adv = yb
        else:
            k = int(round(config.mix_ratio * len(idx)))
            replace = rng.choice(len(idx), size=k, replace=False) if k else np.empty(0, dtype=int)
            yb_adv = yb[replace]
        if config.epsilon > 0 and (config.mix_ratio >= 1.0 or len(yb_adv)):
            xb[replace] = _pgd_iterate(
                model, xb[replace], yb_adv, config.epsilon, config.step_size,
                config.iterations, public_loss(model), config.random_start, rng)
        optimizer.zero_grad()
        logits = model.forward_public(xb, train=True)
        loss, _ = cross_entropy(logits, yb)
        loss.backward()
        optimizer.step(epoch)
        loss_sum += loss.item() * len(idx)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    model.meta["epochs_trained"] = model.meta.get("epochs_trained", 0) + 1
    model.meta["defense"] = "adv_training"
    return {"mean_loss": loss_sum / len(images), "accuracy": correct / len(images)}
