"""Architecture descriptors and builders for the supported networks.

A ``ModelSpec`` is a pure description: an ordered tuple of layer
descriptors for the backbone, plus taps -- (position, head) pairs that
attach an auxiliary classifier to the output of the backbone layer at
that position. ``build_model`` turns a spec into a ``Model`` with
instantiated parameters; ``Model.forward_all`` runs one shared backbone
pass and returns every head's logits with the backbone ("public")
output last.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import nn
from .tensor import Tensor

# ---------------------------------------------------------------------------
# layer descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    batchnorm: bool = False
    relu: bool = True


@dataclass(frozen=True)
class Pool:
    window: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    width: int
    relu: bool = False


LayerSpec = Union[Conv, Pool, Flatten, Dense]

_TAGS = {"conv": Conv, "pool": Pool, "flatten": Flatten, "dense": Dense}


def layer_to_dict(layer: LayerSpec) -> dict:
    for tag, cls in _TAGS.items():
        if isinstance(layer, cls):
            d = {"kind": tag}
            d.update(layer.__dict__)
            return d
    raise TypeError(f"unknown layer descriptor {layer!r}")


def layer_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    cls = _TAGS[d.pop("kind")]
    return cls(**d)


@dataclass(frozen=True)
class AuxSpec:
    """An auxiliary head: layer descriptors ending in a Dense of width num_classes."""

    kind: str
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers or not isinstance(self.layers[-1], Dense) or self.layers[-1].relu:
            raise ValueError("aux head must end in a non-activated Dense layer")


@dataclass(frozen=True)
class ModelSpec:
    input_shape: Tuple[int, int, int]
    backbone: Tuple[LayerSpec, ...]
    taps: Tuple[Tuple[int, AuxSpec], ...]
    num_classes: int

    @property
    def num_aux(self) -> int:
        return len(self.taps)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "backbone": [layer_to_dict(l) for l in self.backbone],
            "taps": [
                {"position": pos,
                 "kind": aux.kind,
                 "layers": [layer_to_dict(l) for l in aux.layers]}
                for pos, aux in self.taps
            ],
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            input_shape=tuple(d["input_shape"]),
            backbone=tuple(layer_from_dict(l) for l in d["backbone"]),
            taps=tuple(
                (t["position"],
                 AuxSpec(t["kind"], tuple(layer_from_dict(l) for l in t["layers"])))
                for t in d["taps"]
            ),
            num_classes=d["num_classes"],
        )

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# shape walking
# ---------------------------------------------------------------------------

Shape = Tuple[int, ...]


def _conv_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(f"kernel {kernel} (stride {stride}, padding {padding}) "
                         f"does not fit extent {extent}")
    return out


def shape_after(layer: LayerSpec, shape: Shape) -> Shape:
    """Output shape of one descriptor applied to a (C, H, W) or (D,) shape."""
    if isinstance(layer, Conv):
        if len(shape) != 3:
            raise ValueError(f"conv layer needs a (C, H, W) input, got {shape}")
        c, h, w = shape
        return (layer.out_channels,
                _conv_extent(h, layer.kernel, layer.stride, layer.padding),
                _conv_extent(w, layer.kernel, layer.stride, layer.padding))
    if isinstance(layer, Pool):
        if len(shape) != 3:
            raise ValueError(f"pool layer needs a (C, H, W) input, got {shape}")
        c, h, w = shape
        return (c, (h + 1) // 2, (w + 1) // 2)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Dense):
        return (layer.width,)
    raise TypeError(f"unknown layer descriptor {layer!r}")


def walk_shapes(layers: Sequence[LayerSpec], input_shape: Shape) -> List[Shape]:
    """Shapes after each layer; raises if any layer cannot be applied."""
    shapes = []
    shape = tuple(input_shape)
    for layer in layers:
        shape = shape_after(layer, shape)
        shapes.append(shape)
    return shapes


def parameter_count(layers: Sequence[LayerSpec], input_shape: Shape) -> int:
    total = 0
    shape = tuple(input_shape)
    for layer in layers:
        if isinstance(layer, Conv):
            total += layer.out_channels * shape[0] * layer.kernel ** 2 + layer.out_channels
            if layer.batchnorm:
                total += 2 * layer.out_channels
        elif isinstance(layer, Dense):
            fan_in = int(np.prod(shape))
            total += layer.width * fan_in + layer.width
        shape = shape_after(layer, shape)
    return total


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_lenet5(num_classes: int = 10) -> ModelSpec:
    """LeNet5 for 1x28x28 inputs: two conv/pool stages, then FC 120 -> classes."""
    backbone = (
        Conv(6, 5),
        Pool(),
        Conv(16, 5),
        Pool(),
        Flatten(),
        Dense(120, relu=True),
        Dense(num_classes),
    )
    return ModelSpec((1, 28, 28), backbone, (), num_classes)


def build_vgg_config(config: Sequence, num_classes: int = 10,
                     input_shape: Tuple[int, int, int] = (3, 32, 32)) -> ModelSpec:
    """VGG-style backbone from a token list: ints are 3x3 conv+BN+ReLU, 'M' pools."""
    if not config:
        raise ValueError("empty VGG config")
    layers: List[LayerSpec] = []
    for token in config:
        if token == "M":
            layers.append(Pool())
        elif isinstance(token, int) and not isinstance(token, bool) and token > 0:
            layers.append(Conv(token, 3, padding=1, batchnorm=True))
        else:
            raise ValueError(f"bad VGG config token {token!r}: expected positive int or 'M'")
    layers.append(Flatten())
    layers.append(Dense(num_classes))
    spec = ModelSpec(input_shape, tuple(layers), (), num_classes)
    walk_shapes(spec.backbone, input_shape)
    return spec


VGG16_CONFIG = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
                512, 512, 512, "M", 512, 512, 512, "M"]

# tap positions matching the layout string
# [64, 64, 'Block1', M, 128, 128, M, 256, 'Block2', 256, 256, M,
#  512, 512, 512, M, 512, 'Block3', 512, 512, M]
VGG16_BLOCK_POSITIONS = {"vgg_block1": 1, "vgg_block2": 6, "vgg_block3": 14}


def build_aux_spec(kind: str, num_classes: int = 10) -> AuxSpec:
    """Auxiliary head architectures, one per dataset/placement variant."""
    if kind == "mnist":
        layers: Tuple[LayerSpec, ...] = (Dense(200, relu=True), Dense(num_classes))
    elif kind == "cifar10":
        layers = (
            Conv(64, 9, stride=4, padding=4, batchnorm=True),
            Conv(256, 3, padding=1, batchnorm=True),
            Pool(),
            Conv(256, 3, padding=1, batchnorm=True),
            Pool(),
            Dense(200, relu=True),
            Dense(num_classes),
        )
    elif kind == "mini_imagenet":
        layers = (
            Conv(64, 9, stride=4, padding=4, batchnorm=True),
            Conv(256, 3, stride=2, padding=1, batchnorm=True),
            Pool(),
            Conv(256, 3, padding=1, batchnorm=True),
            Pool(),
            Conv(512, 3, padding=1, batchnorm=True),
            Pool(),
            Dense(512, relu=True),
            Dense(num_classes),
        )
    elif kind == "vgg_block1":
        layers = (
            Conv(96, 7, stride=2, padding=3, batchnorm=True),
            Pool(),
            Conv(192, 3, padding=1, batchnorm=True),
            Pool(),
            Conv(384, 3, padding=1, batchnorm=True),
            Pool(),
            Conv(512, 3, padding=1, batchnorm=True),
            Pool(),
            Dense(num_classes),
        )
    elif kind == "vgg_block2":
        layers = (
            Pool(),
            Conv(384, 3, padding=1, batchnorm=True),
            Pool(),
            Conv(512, 3, padding=1, batchnorm=True),
            Pool(),
            Dense(num_classes),
        )
    elif kind == "vgg_block3":
        layers = (Pool(), Dense(num_classes))
    else:
        raise ValueError(f"unknown aux head kind {kind!r}")
    return AuxSpec(kind, layers)


def attach_aux(spec: ModelSpec, position: int, aux: AuxSpec) -> ModelSpec:
    """Return a new spec with one more head tapping backbone layer ``position``."""
    if not 0 <= position < len(spec.backbone):
        raise ValueError(f"tap position {position} outside backbone of length {len(spec.backbone)}")
    if aux.layers[-1].width != spec.num_classes:
        raise ValueError(f"aux head ends in width {aux.layers[-1].width}, "
                         f"model has {spec.num_classes} classes")
    tapped = walk_shapes(spec.backbone, spec.input_shape)[position]
    if isinstance(aux.layers[0], (Conv, Pool)) and len(tapped) != 3:
        raise ValueError(f"aux head {aux.kind!r} needs a spatial feature map, "
                         f"but position {position} yields shape {tapped}")
    walk_shapes(_head_layers(aux, tapped), tapped)
    return ModelSpec(spec.input_shape, spec.backbone, spec.taps + ((position, aux),),
                     spec.num_classes)


def _head_layers(aux: AuxSpec, tapped: Shape) -> Tuple[LayerSpec, ...]:
    """Aux layer list adapted to its tap: flatten ahead of a Dense-first head."""
    if isinstance(aux.layers[0], Dense) and len(tapped) != 1:
        return (Flatten(),) + aux.layers
    return aux.layers


def lenet5_aux(num_classes: int = 10) -> ModelSpec:
    """LeNet5 with the MNIST aux head after each conv/pool stage (m=2)."""
    spec = build_lenet5(num_classes)
    aux = build_aux_spec("mnist", num_classes)
    spec = attach_aux(spec, 1, aux)
    spec = attach_aux(spec, 3, aux)
    return spec


def vgg16_with_blocks(num_classes: int = 10,
                      input_shape: Tuple[int, int, int] = (3, 32, 32)) -> ModelSpec:
    """Full VGG16 with Block1/Block2/Block3 at the published positions."""
    spec = build_vgg_config(VGG16_CONFIG, num_classes, input_shape)
    for kind, pos in VGG16_BLOCK_POSITIONS.items():
        spec = attach_aux(spec, pos, build_aux_spec(kind, num_classes))
    return spec


# ---------------------------------------------------------------------------
# instantiated models
# ---------------------------------------------------------------------------


def _instantiate(layers: Sequence[LayerSpec], input_shape: Shape,
                 rng: np.random.Generator) -> List[List[nn.Layer]]:
    """One list of runtime layers per descriptor (Conv may expand to conv+bn+relu)."""
    stages: List[List[nn.Layer]] = []
    shape = tuple(input_shape)
    for layer in layers:
        stage: List[nn.Layer] = []
        if isinstance(layer, Conv):
            gain = np.sqrt(2.0) if layer.relu else 1.0
            stage.append(nn.Conv2d(shape[0], layer.out_channels, layer.kernel,
                                   stride=layer.stride, padding=layer.padding, rng=rng,
                                   gain=gain))
            if layer.batchnorm:
                stage.append(nn.BatchNorm2d(layer.out_channels))
            if layer.relu:
                stage.append(nn.ReLU())
        elif isinstance(layer, Pool):
            stage.append(nn.MaxPool2d())
        elif isinstance(layer, Flatten):
            stage.append(nn.Flatten())
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                stage.append(nn.Flatten())
            gain = np.sqrt(2.0) if layer.relu else 1.0
            stage.append(nn.Linear(int(np.prod(shape)), layer.width, rng=rng, gain=gain))
            if layer.relu:
                stage.append(nn.ReLU())
        shape = shape_after(layer, shape)
        stages.append(stage)
    return stages


class Model:
    """Instantiated parameters for a spec: backbone stages plus aux head stages."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.backbone = _instantiate(spec.backbone, spec.input_shape, rng)
        tap_shapes = walk_shapes(spec.backbone, spec.input_shape)
        self.heads: List[List[List[nn.Layer]]] = []
        for pos, aux in spec.taps:
            tapped = tap_shapes[pos]
            self.heads.append(_instantiate(_head_layers(aux, tapped), tapped, rng))
        self.meta = {"epochs_trained": 0, "seed": seed, "defense": "none"}

    @property
    def num_aux(self) -> int:
        return len(self.heads)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    # -- forward ----------------------------------------------------------------

    def _check_input(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float32))
        expected = self.spec.input_shape
        if x.data.ndim != 4 or x.data.shape[1:] != expected:
            raise ValueError(f"expected input (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                             f"got {x.data.shape}")
        return x

    def forward_all(self, x, train: bool = False) -> List[Tensor]:
        """Logits of every head: aux heads in tap order, then the public output."""
        x = self._check_input(x)
        tap_positions = [pos for pos, _ in self.spec.taps]
        tap_outputs: dict[int, Tensor] = {}
        h = x
        for i, stage in enumerate(self.backbone):
            for layer in stage:
                h = layer.forward(h, train=train)
            if i in tap_positions:
                tap_outputs[i] = h
        outputs = []
        for (pos, _), head in zip(self.spec.taps, self.heads):
            a = tap_outputs[pos]
            for stage in head:
                for layer in stage:
                    a = layer.forward(a, train=train)
            outputs.append(a)
        outputs.append(h)
        return outputs

    def forward_public(self, x, train: bool = False) -> Tensor:
        """Backbone logits only; never touches the aux heads."""
        x = self._check_input(x)
        h = x
        for stage in self.backbone:
            for layer in stage:
                h = layer.forward(h, train=train)
        return h

    # -- parameter access ---------------------------------------------------------

    def _named_layers(self):
        for i, stage in enumerate(self.backbone):
            for j, layer in enumerate(stage):
                yield f"backbone.{i}.{j}", layer
        for a, head in enumerate(self.heads):
            for i, stage in enumerate(head):
                for j, layer in enumerate(stage):
                    yield f"aux{a}.{i}.{j}", layer

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for prefix, layer in self._named_layers():
            for name, p in layer.named_parameters():
                out.append((f"{prefix}.{name}", p))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for prefix, layer in self._named_layers():
            for name, b in layer.named_buffers():
                out.append((f"{prefix}.{name}", b))
        return out

    def load_buffers(self, buffers: dict) -> None:
        for prefix, layer in self._named_layers():
            for name, value in buffers.items():
                if name.startswith(prefix + ".") and name.count(".") == prefix.count(".") + 1:
                    layer.load_buffer(name[len(prefix) + 1:], value)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()[:16]


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    return Model(spec, seed=seed)
