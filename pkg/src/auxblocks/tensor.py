"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a float32 (float64 in oracle/testing code) numpy array
and records the operations applied to it as a closure graph. Calling
``backward()`` on a scalar result walks that graph in reverse topological
order and accumulates ``.grad`` on every tensor that requires it --
including input images, which is how attack gradients are obtained.

The op set is exactly what the supported architectures need: conv2d,
maxpool2d, relu, batchnorm2d, linear, tanh, elementwise arithmetic,
axis sums, cross-entropy, and a hinge margin used by the L2 optimization
attack.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (prediction / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _sum_to_shape(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if grad.shape[axis] != extent:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, _prev: Iterable["Tensor"] = ()):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: Optional[np.ndarray] = None
        self._backward = None
        self._prev: Tuple[Tensor, ...] = tuple(_prev) if self.requires_grad else ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _wrap(data: np.ndarray, parents: Sequence["Tensor"]) -> "Tensor":
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs)
        if needs:
            out._prev = tuple(parents)
        return out

    @staticmethod
    def _as_tensor(value, like: "Tensor") -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=like.data.dtype))

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autograd --------------------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-topological gradient accumulation from a scalar loss."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor._as_tensor(other, self)
        out = Tensor._wrap(self.data + other.data, (self, other))
        if out.requires_grad:
            def backward(g, a=self, b=other):
                a._accumulate(_sum_to_shape(g, a.data.shape))
                b._accumulate(_sum_to_shape(g, b.data.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = Tensor._as_tensor(other, self)
        out = Tensor._wrap(self.data * other.data, (self, other))
        if out.requires_grad:
            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_sum_to_shape(g * b.data, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_sum_to_shape(g * a.data, b.data.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._as_tensor(other, self))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._as_tensor(other, self) + (-self)

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        out = Tensor._wrap(self.data.reshape(*shape), (self,))
        if out.requires_grad:
            def backward(g, a=self):
                a._accumulate(g.reshape(a.data.shape))
            out._backward = backward
        return out

    def sum(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        out = Tensor._wrap(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def backward(g, a=self):
                if axis is not None and not keepdims:
                    axes = (axis,) if isinstance(axis, int) else axis
                    g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
                a._accumulate(np.broadcast_to(g, a.data.shape))
            out._backward = backward
        return out

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.data.size)

    # -- pointwise nonlinearities --------------------------------------------------

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = Tensor._wrap(y, (self,))
        if out.requires_grad:
            def backward(g, a=self):
                a._accumulate(g * (1.0 - y * y))
            out._backward = backward
        return out


def relu(x: Tensor) -> Tensor:
    """max(0, x); subgradient 0 at the kink."""
    mask = x.data > 0
    out = Tensor._wrap(np.where(mask, x.data, 0.0), (x,))
    if out.requires_grad:
        def backward(g, a=x):
            a._accumulate(np.where(mask, g, 0.0))
        out._backward = backward
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ weight.T + bias for x of shape (N, D), weight (O, D)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"linear: input {x.data.shape} incompatible with weight {weight.data.shape}"
        )
    out_data = x.data @ weight.data.T + bias.data
    out = Tensor._wrap(out_data, (x, weight, bias))
    if out.requires_grad:
        def backward(g, a=x, w=weight, b=bias):
            if a.requires_grad:
                a._accumulate(g @ w.data)
            if w.requires_grad:
                w._accumulate(g.T @ a.data)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0))
        out._backward = backward
    return out


def _conv_out_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - kernel) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view (N, C, kh, kw, Ho, Wo) over a padded input."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    shape = (n, c, kh, kw, ho, wo)
    strides = (sn, sc, sh, sw, sh * stride, sw * stride)
    return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an (N, C, H, W) batch with (K, C, kh, kw) filters."""
    n, c, h, w = x.data.shape
    k, cw, kh, kw = weight.data.shape
    if c != cw:
        raise ValueError(
            f"conv2d: input channels {x.data.shape} do not match weight {weight.data.shape}"
        )
    ho = _conv_out_extent(h, kh, stride, padding)
    wo = _conv_out_extent(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(
            f"conv2d: kernel {weight.data.shape} with stride={stride} padding={padding} "
            f"does not fit input {x.data.shape}"
        )
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride)
    # (C*kh*kw, N*Ho*Wo) GEMM against (K, C*kh*kw)
    cols_mat = np.ascontiguousarray(cols.transpose(1, 2, 3, 0, 4, 5)).reshape(c * kh * kw, -1)
    w_mat = weight.data.reshape(k, -1)
    out_data = (w_mat @ cols_mat).reshape(k, n, ho, wo).transpose(1, 0, 2, 3)
    out_data = out_data + bias.data.reshape(1, k, 1, 1)
    out = Tensor._wrap(out_data, (x, weight, bias))
    if out.requires_grad:
        def backward(g, a=x, wt=weight, b=bias):
            g_mat = g.transpose(1, 0, 2, 3).reshape(k, -1)
            if b.requires_grad:
                b._accumulate(g_mat.sum(axis=1))
            if wt.requires_grad:
                wt._accumulate((g_mat @ cols_mat.T).reshape(wt.data.shape))
            if a.requires_grad:
                dcols = (w_mat.T @ g_mat).reshape(c, kh, kw, n, ho, wo)
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                            dcols[:, i, j].transpose(1, 0, 2, 3)
                        )
                if padding:
                    dxp = dxp[:, :, padding : padding + h, padding : padding + w]
                a._accumulate(dxp)
        out._backward = backward
    return out


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; odd extents are padded with -inf on bottom/right."""
    if window != 2:
        raise ValueError("maxpool2d supports window=2 only")
    n, c, h, w = x.data.shape
    ph, pw = h % 2, w % 2
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    ho, wo = xp.shape[2] // 2, xp.shape[3] // 2
    windows = xp.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out = Tensor._wrap(out_data, (x,))
    if out.requires_grad:
        def backward(g, a=x):
            dwin = np.zeros_like(windows)
            np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
            dxp = dwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(xp.shape)
            a._accumulate(dxp[:, :, :h, :w])
        out._backward = backward
    return out


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: "BatchNormState",
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of an (N, C, H, W) batch.

    Train mode normalizes by batch statistics and folds them into the running
    buffers; eval mode normalizes by the running buffers and raises if they
    were never populated.
    """
    n, c, h, w = x.data.shape
    axes = (0, 2, 3)
    m = n * h * w
    if train:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state.mean is None:
            state.mean = np.zeros(c, dtype=x.data.dtype)
            state.var = np.ones(c, dtype=x.data.dtype)
        unbiased = var * (m / max(m - 1, 1))
        state.mean = (1 - momentum) * state.mean + momentum * mean
        state.var = (1 - momentum) * state.var + momentum * unbiased
    else:
        if state.mean is None:
            raise RuntimeError("batchnorm2d: eval mode before any training batch populated running stats")
        mean, var = state.mean, state.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out_data = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    out = Tensor._wrap(out_data, (x, gamma, beta))
    if out.requires_grad:
        def backward(g, a=x, gm=gamma, bt=beta):
            if bt.requires_grad:
                bt._accumulate(g.sum(axis=axes))
            if gm.requires_grad:
                gm._accumulate((g * xhat).sum(axis=axes))
            if a.requires_grad:
                dxhat = g * gm.data.reshape(1, c, 1, 1)
                if train:
                    # standard batch-statistics backward
                    istd = inv_std.reshape(1, c, 1, 1)
                    sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
                    sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
                    dx = (dxhat - sum_dxhat / m - xhat * sum_dxhat_xhat / m) * istd
                else:
                    dx = dxhat * inv_std.reshape(1, c, 1, 1)
                a._accumulate(dx)
        out._backward = backward
    return out


class BatchNormState:
    """Running mean/variance buffers; ``mean is None`` until first train batch."""

    __slots__ = ("mean", "var")

    def __init__(self):
        self.mean: Optional[np.ndarray] = None
        self.var: Optional[np.ndarray] = None


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of raw (N, T) logits; plain ndarray in, ndarray out."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tuple[Tensor, np.ndarray]:
    """Mean negative log likelihood over the batch, plus the softmax rows.

    Stabilized by max subtraction; labels are integer class indices.
    """
    n, t = logits.data.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= t:
        raise ValueError(f"cross_entropy: label outside [0, {t})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1)) + zmax[:, 0]
    loss_data = (lse - z[np.arange(n), labels]).mean()
    probs = softmax(z)
    out = Tensor._wrap(np.asarray(loss_data, dtype=z.dtype), (logits,))
    if out.requires_grad:
        def backward(g, a=logits):
            dz = probs.copy()
            dz[np.arange(n), labels] -= 1.0
            a._accumulate(dz * (g / n))
        out._backward = backward
    return out, probs.astype(z.dtype)


def cw_margin(logits: Tensor, target: np.ndarray, kappa: float = 0.0) -> Tensor:
    """Targeted hinge max(0, max_{j != t} z_j - z_t + kappa), per example."""
    n, t = logits.data.shape
    target = np.asarray(target)
    z = logits.data
    rows = np.arange(n)
    z_target = z[rows, target]
    masked = z.copy()
    masked[rows, target] = -np.inf
    other_idx = masked.argmax(axis=1)
    margin = masked[rows, other_idx] - z_target + kappa
    active = margin > 0
    out_data = np.where(active, margin, 0.0).astype(z.dtype)
    out = Tensor._wrap(out_data, (logits,))
    if out.requires_grad:
        def backward(g, a=logits):
            dz = np.zeros_like(z)
            ga = g * active
            dz[rows, other_idx] += ga
            dz[rows, target] -= ga
            a._accumulate(dz)
        out._backward = backward
    return out
