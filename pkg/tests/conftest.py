"""Shared fixtures: a small separable dataset and models trained on it once."""

import numpy as np
import pytest

from auxblocks import data, ensemble, models
from auxblocks.optim import SGD


def small_aux_spec(num_classes=4, image_size=16):
    spec = models.build_lenet5(num_classes)
    spec = models.ModelSpec((1, image_size, image_size), spec.backbone, (), num_classes)
    head = models.build_aux_spec("mnist", num_classes)
    spec = models.attach_aux(spec, 1, head)
    spec = models.attach_aux(spec, 3, head)
    return spec


def train_model(spec, dataset, epochs=4, lr=0.05, momentum=0.5, seed=7, batch_size=32):
    model = models.build_model(spec, seed=seed)
    opt = SGD(model.parameters(), lr=lr, momentum=momentum)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        ensemble.train_epoch(model, dataset.images, dataset.labels, opt,
                             rng=rng, batch_size=batch_size, epoch=epoch)
    return model


@pytest.fixture(scope="session")
def blobs():
    return data.synthetic_dataset(num_classes=4, per_class=40, image_size=16, seed=11)


@pytest.fixture(scope="session")
def blobs_test():
    return data.synthetic_dataset(num_classes=4, per_class=25, image_size=16, seed=12)


@pytest.fixture(scope="session")
def aux_model(blobs):
    """LeNet-style model with two aux heads, trained to convergence on blobs."""
    return train_model(small_aux_spec(), blobs)


@pytest.fixture(scope="session")
def plain_model(blobs):
    """Backbone-only twin of aux_model (same seed, so shared layers match)."""
    spec = small_aux_spec()
    plain = models.ModelSpec(spec.input_shape, spec.backbone, (), spec.num_classes)
    return train_model(plain, blobs)
