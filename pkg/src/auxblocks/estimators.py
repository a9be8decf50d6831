"""scikit-learn style front end for the self-ensemble classifier.

``AuxBlockClassifier`` wraps spec building, joint training, and ensemble
prediction behind the usual fit/predict/predict_proba surface so the
defense drops into pipelines, grid search, and cross-validation.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import ensemble, models
from .optim import SGD
from .validation import as_image_batch, encode_labels


class AuxBlockClassifier(BaseEstimator, ClassifierMixin):
    """CNN classifier with jointly trained auxiliary heads.

    Parameters
    ----------
    backbone : "lenet5" or "vgg"; "vgg" requires ``vgg_config``.
    aux : aux head kind ("mnist", "cifar10", ...) or None for a plain backbone.
    tap_positions : backbone layer indices to tap; None picks the LeNet5
        defaults (after each pooling stage) when ``aux`` is set.
    predict_mode : "vote", "score", "private_vote", "private_score", "public".
    alphas : per-head loss/score weights, backbone last; None means all ones.
    input_shape : (C, H, W) used to reshape 2-D inputs; inferred from 4-D input.
    """

    def __init__(self, backbone: str = "lenet5", vgg_config: Optional[Sequence] = None,
                 aux: Optional[str] = "mnist", tap_positions: Optional[Sequence[int]] = None,
                 input_shape: Optional[Tuple[int, int, int]] = None,
                 epochs: int = 20, batch_size: int = 128, learning_rate: float = 0.01,
                 momentum: float = 0.5, weight_decay: float = 0.0,
                 lr_schedule: Sequence[Tuple[int, float]] = (),
                 alphas: Optional[Sequence[float]] = None, predict_mode: str = "vote",
                 random_state: int = 0, verbose: bool = False):
        self.backbone = backbone
        self.vgg_config = vgg_config
        self.aux = aux
        self.tap_positions = tap_positions
        self.input_shape = input_shape
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.alphas = alphas
        self.predict_mode = predict_mode
        self.random_state = random_state
        self.verbose = verbose

    # -- spec assembly -------------------------------------------------------

    def _build_spec(self, input_shape, num_classes) -> models.ModelSpec:
        if self.backbone == "lenet5":
            spec = models.build_lenet5(num_classes)
            spec = models.ModelSpec(tuple(input_shape), spec.backbone, (), num_classes)
            default_taps = (1, 3)
        elif self.backbone == "vgg":
            if not self.vgg_config:
                raise ValueError("backbone='vgg' requires vgg_config")
            spec = models.build_vgg_config(self.vgg_config, num_classes, tuple(input_shape))
            default_taps = ()
        else:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        models.walk_shapes(spec.backbone, spec.input_shape)
        if self.aux:
            taps = self.tap_positions if self.tap_positions is not None else default_taps
            head = models.build_aux_spec(self.aux, num_classes)
            for pos in taps:
                spec = models.attach_aux(spec, int(pos), head)
        return spec

    # -- sklearn API -----------------------------------------------------------

    def fit(self, X, y):
        X = as_image_batch(X, self.input_shape)
        y_idx, self.classes_ = encode_labels(y)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.input_shape_ = X.shape[1:]
        spec = self._build_spec(X.shape[1:], len(self.classes_))
        self.model_ = models.build_model(spec, seed=self.random_state)
        optimizer = SGD(self.model_.parameters(), lr=self.learning_rate,
                        momentum=self.momentum, weight_decay=self.weight_decay,
                        schedule=self.lr_schedule)
        rng = np.random.default_rng(self.random_state)
        self.history_ = []
        for epoch in range(self.epochs):
            stats = ensemble.train_epoch(self.model_, X, y_idx, optimizer,
                                         alphas=self.alphas, rng=rng,
                                         batch_size=self.batch_size, epoch=epoch)
            self.history_.append(stats)
            if self.verbose:
                print(f"epoch {epoch + 1}/{self.epochs}: loss {stats['mean_loss']:.4f} "
                      f"acc {stats['per_head_accuracy']}")
        return self

    def _checked_input(self, X) -> np.ndarray:
        X = as_image_batch(X, self.input_shape)
        if X.shape[1:] != self.input_shape_:
            raise ValueError(f"expected images of shape {self.input_shape_}, got {X.shape[1:]}")
        return X

    def predict(self, X):
        X = self._checked_input(X)
        idx = ensemble.predict(self.model_, X, self.predict_mode, self.alphas)
        return self.classes_[idx]

    def predict_proba(self, X):
        """Normalized alpha-weighted mean of per-head softmax rows."""
        X = self._checked_input(X)
        include_public = not self.predict_mode.startswith("private")
        pred = ensemble.predict_score(self.model_, X, self.alphas, include_public)
        scores = pred.tally
        return scores / scores.sum(axis=1, keepdims=True)
