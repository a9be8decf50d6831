"""Joint training over all heads and the self-ensemble prediction modes.

Training minimizes the weighted sum of per-head cross-entropies in one
backward pass. Prediction combines the m+1 heads either by majority vote
(ties broken by the weighted summed softmax over the tied classes, then
lowest class index) or by the weighted sum of softmax rows; the
``private`` variants exclude the public backbone head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .models import Model
from .optim import SGD
from .tensor import Tensor, cross_entropy, no_grad, softmax

PREDICT_MODES = ("vote", "score", "private_vote", "private_score", "public")


@dataclass
class EnsembleConfig:
    alphas: Optional[Sequence[float]] = None  # per head, backbone last; None = all ones
    predict_mode: str = "vote"

    def __post_init__(self):
        if self.predict_mode not in PREDICT_MODES:
            raise ValueError(f"predict_mode must be one of {PREDICT_MODES}")
        if self.alphas is not None and any(a <= 0 for a in self.alphas):
            raise ValueError("alphas must all be positive")


@dataclass
class Prediction:
    """Per-head argmaxes, per-head softmax rows, the combined decision, and its tally."""

    per_head: np.ndarray          # (k, N) argmax of each included head
    probs: List[np.ndarray]       # k arrays of shape (N, T)
    final: np.ndarray             # (N,)
    tally: np.ndarray             # (N, T) vote counts or summed scores


def _resolve_alphas(alphas: Optional[Sequence[float]], count: int) -> np.ndarray:
    if alphas is None:
        return np.ones(count, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (count,):
        raise ValueError(f"expected {count} alphas, got shape {alphas.shape}")
    if (alphas <= 0).any():
        raise ValueError("alphas must all be positive")
    return alphas


def joint_loss(outputs: Sequence[Tensor], labels: np.ndarray,
               alphas: Optional[Sequence[float]] = None) -> Tensor:
    """Sum of alpha-weighted cross-entropies over all heads."""
    alphas = _resolve_alphas(alphas, len(outputs))
    total = None
    for alpha, out in zip(alphas, outputs):
        loss, _ = cross_entropy(out, labels)
        term = loss * float(alpha)
        total = term if total is None else total + term
    return total


def minibatch_indices(rng: np.random.Generator, n: int, batch_size: int) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_epoch(model: Model, images: np.ndarray, labels: np.ndarray, optimizer: SGD,
                alphas: Optional[Sequence[float]] = None, rng: Optional[np.random.Generator] = None,
                batch_size: int = 128, epoch: int = 0) -> dict:
    """One shuffled pass; returns mean joint loss and per-head accuracy."""
    if len(images) == 0:
        raise ValueError("empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    k = model.num_aux + 1
    alphas_arr = _resolve_alphas(alphas, k)
    loss_sum = 0.0
    correct = np.zeros(k, dtype=np.int64)
    for idx in minibatch_indices(rng, len(images), batch_size):
        xb, yb = images[idx], labels[idx]
        optimizer.zero_grad()
        outputs = model.forward_all(xb, train=True)
        loss = joint_loss(outputs, yb, alphas_arr)
        loss.backward()
        optimizer.step(epoch)
        loss_sum += loss.item() * len(idx)
        for j, out in enumerate(outputs):
            correct[j] += int((out.data.argmax(axis=1) == yb).sum())
    model.meta["epochs_trained"] = model.meta.get("epochs_trained", 0) + 1
    return {
        "mean_loss": loss_sum / len(images),
        "per_head_accuracy": (correct / len(images)).tolist(),
    }


def predict_logits(model: Model, images: np.ndarray, batch_size: int = 256) -> List[np.ndarray]:
    """Eval-mode logits of every head over the batch, graph-free."""
    chunks: List[List[np.ndarray]] = [[] for _ in range(model.num_aux + 1)]
    with no_grad():
        for start in range(0, len(images), batch_size):
            outputs = model.forward_all(images[start:start + batch_size], train=False)
            for j, out in enumerate(outputs):
                chunks[j].append(out.data)
    return [np.concatenate(c, axis=0) for c in chunks]


def _included(model: Model, include_public: bool,
              alphas: Optional[Sequence[float]], logits: List[np.ndarray]):
    alphas_arr = _resolve_alphas(alphas, model.num_aux + 1)
    if include_public:
        return logits, alphas_arr
    if model.num_aux < 1:
        raise ValueError("private prediction needs at least one aux head")
    return logits[:-1], alphas_arr[:-1]


def predict_vote(model: Model, images: np.ndarray, include_public: bool = True,
                 alphas: Optional[Sequence[float]] = None) -> Prediction:
    """Majority vote of head argmaxes.

    Ties are broken by the alpha-weighted summed softmax restricted to the
    tied classes; remaining ties fall to the lowest class index.
    """
    logits, alphas_arr = _included(model, include_public,
                                   alphas, predict_logits(model, images))
    probs = [softmax(z) for z in logits]
    votes = np.stack([z.argmax(axis=1) for z in logits])
    n, t = logits[0].shape
    tally = np.zeros((n, t), dtype=np.float64)
    eye = np.eye(t)
    for row in votes:
        tally += eye[row]
    score = sum(a * p for a, p in zip(alphas_arr, probs))
    tied = tally == tally.max(axis=1, keepdims=True)
    final = np.where(tied, score, -np.inf).argmax(axis=1)
    return Prediction(per_head=votes, probs=probs, final=final, tally=tally)


def predict_score(model: Model, images: np.ndarray, alphas: Optional[Sequence[float]] = None,
                  include_public: bool = True) -> Prediction:
    """argmax of the alpha-weighted sum of per-head softmax rows."""
    logits, alphas_arr = _included(model, include_public,
                                   alphas, predict_logits(model, images))
    probs = [softmax(z) for z in logits]
    votes = np.stack([z.argmax(axis=1) for z in logits])
    score = sum(a * p for a, p in zip(alphas_arr, probs))
    return Prediction(per_head=votes, probs=probs, final=score.argmax(axis=1), tally=score)


def predict(model: Model, images: np.ndarray, mode: str = "vote",
            alphas: Optional[Sequence[float]] = None) -> np.ndarray:
    """Final class choices under any of the supported modes."""
    if mode == "vote":
        return predict_vote(model, images, True, alphas).final
    if mode == "score":
        return predict_score(model, images, alphas, True).final
    if mode == "private_vote":
        return predict_vote(model, images, False, alphas).final
    if mode == "private_score":
        return predict_score(model, images, alphas, False).final
    if mode == "public":
        return predict_logits(model, images)[-1].argmax(axis=1)
    raise ValueError(f"unknown predict mode {mode!r}")


def accuracy(model: Model, images: np.ndarray, labels: np.ndarray, mode: str = "vote",
             alphas: Optional[Sequence[float]] = None) -> float:
    return float((predict(model, images, mode, alphas) == labels).mean())
