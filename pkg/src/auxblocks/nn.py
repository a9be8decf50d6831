"""Layer objects: parameter containers around the functional ops in tensor.py.

Layers are instantiated with concrete shapes and a numpy Generator so that
every parameter value is a deterministic function of the run seed. Forward
passes take an explicit ``train`` flag instead of mutable module state;
prediction is therefore read-only by construction.
"""

from __future__ import annotations

from typing import Iterator, List, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int,
                    gain: float = np.sqrt(2.0)) -> np.ndarray:
    """Fan-in scaled uniform init; gain sqrt(2) ahead of ReLU, 1 otherwise."""
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Layer:
    """Base: parameter/buffer enumeration and a forward(x, train) contract."""

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return []

    def named_buffers(self) -> List[Tuple[str, np.ndarray]]:
        return []

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, rng: np.random.Generator | None = None,
                 gain: float = np.sqrt(2.0)):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel),
                                             fan_in, gain), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None,
                 gain: float = 1.0):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(kaiming_uniform(rng, (out_features, in_features), in_features, gain),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm2d(Layer):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.state = T.BatchNormState()

    def named_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def named_buffers(self):
        if self.state.mean is None:
            return []
        return [("running_mean", self.state.mean), ("running_var", self.state.var)]

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        if name == "running_mean":
            self.state.mean = value.astype(np.float32)
        elif name == "running_var":
            self.state.var = value.astype(np.float32)
        else:
            raise KeyError(name)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return T.batchnorm2d(x, self.gamma, self.beta, self.state, train,
                             momentum=self.momentum, eps=self.eps)


class ReLU(Layer):
    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return T.relu(x)


class MaxPool2d(Layer):
    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return T.maxpool2d(x)


class Flatten(Layer):
    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        return x.reshape(x.shape[0], -1)


def run_layers(layers: Iterator[Layer], x: Tensor, train: bool = False) -> Tensor:
    for layer in layers:
        x = layer.forward(x, train=train)
    return x
