"""
Differentiable primitive operations on Tensors.

Each primitive is a Function subclass with a numpy forward and a backward rule.
Public helpers (conv2d, relu, ...) build the Function and record it on the
active tape when at least one input requires grad.

Conventions:
- Image tensors are [N, C, H, W]; conv2d/pooling also accept [C, H, W]
- Pooling drops incomplete windows (valid convention)
- Max-pool ties route the gradient to the first row-major maximum
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Literal, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from src.engine.tensor import GraphNode, Tensor, active_tape
from src.errors import TensorError


BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


class Function:
    """Base class for primitives: forward on arrays, backward on gradients."""

    name = "function"

    def forward(self, ctx: dict[str, Any], *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, ctx: dict[str, Any], grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    def __call__(self, *inputs: Tensor) -> Tensor:
        ctx: dict[str, Any] = {}
        out_data = self.forward(ctx, *(t.data for t in inputs))
        tape = active_tape()
        track = tape is not None and any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=track)
        if track:
            tape.record(GraphNode(op=self, inputs=tuple(inputs), output=out, ctx=ctx))
        return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise TensorError(f"Invalid axis {axis} for a tensor with {ndim} dimensions")
    return axis % ndim


# ---------------------------------------------------------------------------
# Elementwise and structural primitives
# ---------------------------------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, ctx, a, b):
        ctx["shapes"] = (a.shape, b.shape)
        return a + b

    def backward(self, ctx, grad):
        sa, sb = ctx["shapes"]
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)


class Mul(Function):
    name = "mul"

    def forward(self, ctx, a, b):
        ctx["a"], ctx["b"] = a, b
        return a * b

    def backward(self, ctx, grad):
        a, b = ctx["a"], ctx["b"]
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Scale(Function):
    name = "scale"

    def __init__(self, factor: float) -> None:
        self.factor = factor

    def forward(self, ctx, x):
        return x * self.factor

    def backward(self, ctx, grad):
        return (grad * self.factor,)


class SumAll(Function):
    name = "sum"

    def forward(self, ctx, x):
        ctx["shape"] = x.shape
        return np.asarray(x.sum())

    def backward(self, ctx, grad):
        return (np.broadcast_to(grad, ctx["shape"]).copy(),)


class Reshape(Function):
    name = "reshape"

    def __init__(self, shape: tuple[int, ...]) -> None:
        self.shape = shape

    def forward(self, ctx, x):
        ctx["shape"] = x.shape
        try:
            return x.reshape(self.shape)
        except ValueError as e:
            raise TensorError(f"Cannot reshape {x.shape} to {self.shape}: {e}")

    def backward(self, ctx, grad):
        return (grad.reshape(ctx["shape"]),)


class ReLU(Function):
    name = "relu"

    def forward(self, ctx, x):
        ctx["mask"] = x > 0
        return np.where(ctx["mask"], x, 0.0).astype(x.dtype)

    def backward(self, ctx, grad):
        return (grad * ctx["mask"],)


class Softmax(Function):
    name = "softmax"

    def __init__(self, axis: int) -> None:
        self.axis = axis

    def forward(self, ctx, x):
        axis = _check_axis(self.axis, x.ndim)
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)
        ctx["s"], ctx["axis"] = s, axis
        return s

    def backward(self, ctx, grad):
        s, axis = ctx["s"], ctx["axis"]
        return (s * (grad - (grad * s).sum(axis=axis, keepdims=True)),)


class LogSoftmax(Function):
    name = "log_softmax"

    def __init__(self, axis: int) -> None:
        self.axis = axis

    def forward(self, ctx, x):
        axis = _check_axis(self.axis, x.ndim)
        shifted = x - x.max(axis=axis, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - logz
        ctx["out"], ctx["axis"] = out, axis
        return out

    def backward(self, ctx, grad):
        out, axis = ctx["out"], ctx["axis"]
        return (grad - np.exp(out) * grad.sum(axis=axis, keepdims=True),)


class Concat(Function):
    name = "concat"

    def __init__(self, axis: int) -> None:
        self.axis = axis

    def forward(self, ctx, a, b):
        if a.ndim != b.ndim:
            raise TensorError(f"concat needs equal ranks, got {a.shape} and {b.shape}")
        axis = _check_axis(self.axis, a.ndim)
        for i, (da, db) in enumerate(zip(a.shape, b.shape)):
            if i != axis and da != db:
                raise TensorError(
                    f"concat shapes {a.shape} and {b.shape} disagree on axis {i}"
                )
        ctx["split"], ctx["axis"] = a.shape[axis], axis
        return np.concatenate([a, b], axis=axis)

    def backward(self, ctx, grad):
        ga, gb = np.split(grad, [ctx["split"]], axis=ctx["axis"])
        return ga, gb


class SliceAxis(Function):
    name = "slice"

    def __init__(self, axis: int, start: int, stop: int) -> None:
        self.axis, self.start, self.stop = axis, start, stop

    def forward(self, ctx, x):
        axis = _check_axis(self.axis, x.ndim)
        if not 0 <= self.start < self.stop <= x.shape[axis]:
            raise TensorError(
                f"Slice [{self.start}:{self.stop}] out of range for axis {axis} of {x.shape}"
            )
        index = [slice(None)] * x.ndim
        index[axis] = slice(self.start, self.stop)
        ctx["index"], ctx["shape"] = tuple(index), x.shape
        return x[ctx["index"]].copy()

    def backward(self, ctx, grad):
        out = np.zeros(ctx["shape"], dtype=grad.dtype)
        out[ctx["index"]] = grad
        return (out,)


class CenterCrop2d(Function):
    name = "center_crop"

    def __init__(self, height: int, width: int) -> None:
        self.height, self.width = height, width

    def forward(self, ctx, x):
        h, w = x.shape[-2:]
        if self.height > h or self.width > w:
            raise TensorError(f"Cannot crop {h}x{w} to {self.height}x{self.width}")
        top, left = (h - self.height) // 2, (w - self.width) // 2
        ctx["window"] = (slice(top, top + self.height), slice(left, left + self.width))
        ctx["shape"] = x.shape
        return x[..., ctx["window"][0], ctx["window"][1]].copy()

    def backward(self, ctx, grad):
        out = np.zeros(ctx["shape"], dtype=grad.dtype)
        out[..., ctx["window"][0], ctx["window"][1]] = grad
        return (out,)


class Upsample2d(Function):
    name = "upsample"

    def __init__(self, factor: int) -> None:
        self.factor = factor

    def forward(self, ctx, x):
        f = self.factor
        return x.repeat(f, axis=-2).repeat(f, axis=-1)

    def backward(self, ctx, grad):
        f = self.factor
        *lead, h, w = grad.shape
        return (grad.reshape(*lead, h // f, f, w // f, f).sum(axis=(-3, -1)),)


class Pick(Function):
    """Gather x along `axis` with an integer index array (index has x's shape minus axis)."""

    name = "pick"

    def __init__(self, index: np.ndarray, axis: int) -> None:
        self.index = np.asarray(index, dtype=np.int64)
        self.axis = axis

    def forward(self, ctx, x):
        axis = _check_axis(self.axis, x.ndim)
        expected = x.shape[:axis] + x.shape[axis + 1:]
        if self.index.shape != expected:
            raise TensorError(f"pick index shape {self.index.shape} != expected {expected}")
        if self.index.size and (self.index.min() < 0 or self.index.max() >= x.shape[axis]):
            raise TensorError(f"pick index out of range [0, {x.shape[axis]})")
        idx = np.expand_dims(self.index, axis)
        ctx["idx"], ctx["axis"], ctx["shape"] = idx, axis, x.shape
        return np.take_along_axis(x, idx, axis=axis).squeeze(axis)

    def backward(self, ctx, grad):
        out = np.zeros(ctx["shape"], dtype=grad.dtype)
        np.put_along_axis(out, ctx["idx"], np.expand_dims(grad, ctx["axis"]), axis=ctx["axis"])
        return (out,)


class WeightedSum(Function):
    """sum(x * w) for a constant weight array w."""

    name = "weighted_sum"

    def __init__(self, weights: np.ndarray) -> None:
        self.weights = np.asarray(weights)

    def forward(self, ctx, x):
        if self.weights.shape != x.shape:
            raise TensorError(f"weights shape {self.weights.shape} != input shape {x.shape}")
        return np.asarray((x * self.weights).sum())

    def backward(self, ctx, grad):
        return (grad * self.weights,)


class CrossEntropyFromLogits(Function):
    """Mean over rows of -log softmax(logits)[target]."""

    name = "cross_entropy"

    def __init__(self, targets: np.ndarray) -> None:
        self.targets = np.asarray(targets, dtype=np.int64)

    def forward(self, ctx, logits):
        squeeze = logits.ndim == 1
        z = logits[None, :] if squeeze else logits
        if z.ndim != 2:
            raise TensorError(f"cross_entropy expects [K] or [N, K] logits, got {logits.shape}")
        targets = self.targets.reshape(-1)
        if targets.shape[0] != z.shape[0]:
            raise TensorError(f"{targets.shape[0]} targets for {z.shape[0]} rows of logits")
        if targets.min() < 0 or targets.max() >= z.shape[1]:
            raise TensorError(f"target index out of range [0, {z.shape[1]})")
        shifted = z - z.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - logz
        rows = np.arange(z.shape[0])
        ctx.update(p=np.exp(log_p), targets=targets, rows=rows, squeeze=squeeze)
        return np.asarray(-log_p[rows, targets].mean())

    def backward(self, ctx, grad):
        p, targets, rows = ctx["p"], ctx["targets"], ctx["rows"]
        d = p.copy()
        d[rows, targets] -= 1.0
        d *= grad / p.shape[0]
        return (d[0] if ctx["squeeze"] else d,)


class FullyConnected(Function):
    name = "fully_connected"

    def forward(self, ctx, x, w, b):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise TensorError(f"fully_connected: input {x.shape} incompatible with weights {w.shape}")
        if b.shape != (w.shape[1],):
            raise TensorError(f"fully_connected: bias {b.shape} != ({w.shape[1]},)")
        ctx["x"], ctx["w"] = x, w
        return x @ w + b

    def backward(self, ctx, grad):
        x, w = ctx["x"], ctx["w"]
        return grad @ w.T, x.T @ grad, grad.sum(axis=0)


# ---------------------------------------------------------------------------
# Convolution and pooling
# ---------------------------------------------------------------------------


class ConvSpec(BaseModel):
    """Geometry of a 2D convolution."""

    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    kernel_h: int = Field(ge=1)
    kernel_w: int = Field(ge=1)
    stride_h: int = Field(default=1, ge=1)
    stride_w: int = Field(default=1, ge=1)
    padding: Literal["same", "valid"] = "same"

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        """Spatial output size for an input of height x width."""
        if self.padding == "same":
            return math.ceil(height / self.stride_h), math.ceil(width / self.stride_w)
        if height < self.kernel_h or width < self.kernel_w:
            raise TensorError(
                f"Kernel {self.kernel_h}x{self.kernel_w} larger than input {height}x{width}"
            )
        return (
            (height - self.kernel_h) // self.stride_h + 1,
            (width - self.kernel_w) // self.stride_w + 1,
        )

    def pad_amounts(self, height: int, width: int) -> tuple[int, int, int, int]:
        """(top, bottom, left, right) zero padding; extra goes bottom/right."""
        if self.padding == "valid":
            return 0, 0, 0, 0
        out_h, out_w = self.output_size(height, width)
        pad_h = max((out_h - 1) * self.stride_h + self.kernel_h - height, 0)
        pad_w = max((out_w - 1) * self.stride_w + self.kernel_w - width, 0)
        return pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2


def _strided_windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """View of shape [..., Ho, Wo, kh, kw] over the last two axes."""
    return sliding_window_view(x, (kh, kw), axis=(-2, -1))[..., ::sh, ::sw, :, :]


def _scatter_windows(
    target: np.ndarray, window_grads: np.ndarray, kh: int, kw: int, sh: int, sw: int
) -> None:
    """Add window-shaped gradients [..., Ho, Wo, kh, kw] back onto target [..., H, W]."""
    ho, wo = window_grads.shape[-4], window_grads.shape[-3]
    for i in range(kh):
        for j in range(kw):
            target[..., i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += (
                window_grads[..., i, j]
            )


class Conv2d(Function):
    name = "conv2d"

    def __init__(self, spec: ConvSpec) -> None:
        self.spec = spec

    def forward(self, ctx, x, w, b=None):
        spec = self.spec
        if x.ndim != 4:
            raise TensorError(f"conv2d expects [N, C, H, W] input, got {x.shape}")
        expected_w = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        if w.shape != expected_w:
            raise TensorError(f"conv2d weights {w.shape} != expected {expected_w}")
        if x.shape[1] != spec.in_channels:
            raise TensorError(
                f"conv2d input has {x.shape[1]} channels, spec expects {spec.in_channels}"
            )
        if b is not None and b.shape != (spec.out_channels,):
            raise TensorError(f"conv2d bias {b.shape} != ({spec.out_channels},)")

        h, w_in = x.shape[2:]
        out_h, out_w = spec.output_size(h, w_in)
        top, bottom, left, right = spec.pad_amounts(h, w_in)
        xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right))) if spec.padding == "same" else x
        windows = _strided_windows(xp, spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w)
        windows = windows[:, :, :out_h, :out_w]
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if b is not None:
            out = out + b[None, :, None, None]

        ctx.update(windows=windows, w=w, xp_shape=xp.shape,
                   crop=(top, top + h, left, left + w_in), has_bias=b is not None)
        return np.ascontiguousarray(out)

    def backward(self, ctx, grad):
        spec = self.spec
        windows, w = ctx["windows"], ctx["w"]
        grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        window_grads = np.tensordot(grad, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
        window_grads = window_grads.transpose(0, 3, 1, 2, 4, 5)
        grad_xp = np.zeros(ctx["xp_shape"], dtype=grad.dtype)
        _scatter_windows(grad_xp, window_grads, spec.kernel_h, spec.kernel_w,
                         spec.stride_h, spec.stride_w)
        t, b_, l, r = ctx["crop"]
        grad_x = grad_xp[:, :, t:b_, l:r]
        if ctx["has_bias"]:
            return grad_x, grad_w, grad.sum(axis=(0, 2, 3))
        return grad_x, grad_w


class _Pool2d(Function):
    def __init__(self, kernel: tuple[int, int], stride: tuple[int, int]) -> None:
        if min(kernel) < 1 or min(stride) < 1:
            raise TensorError(f"Pooling kernel {kernel} and stride {stride} must be >= 1")
        self.kernel, self.stride = kernel, stride

    def _windows(self, ctx, x):
        if x.ndim < 2:
            raise TensorError(f"Pooling needs at least 2 dimensions, got {x.shape}")
        kh, kw = self.kernel
        if kh > x.shape[-2] or kw > x.shape[-1]:
            raise TensorError(f"Pooling kernel {self.kernel} larger than input {x.shape[-2:]}")
        ctx["shape"] = x.shape
        return _strided_windows(x, kh, kw, *self.stride)


class MeanPool2d(_Pool2d):
    name = "mean_pool2d"

    def forward(self, ctx, x):
        return self._windows(ctx, x).mean(axis=(-2, -1))

    def backward(self, ctx, grad):
        kh, kw = self.kernel
        out = np.zeros(ctx["shape"], dtype=grad.dtype)
        share = np.broadcast_to((grad / (kh * kw))[..., None, None], grad.shape + (kh, kw))
        _scatter_windows(out, share, kh, kw, *self.stride)
        return (out,)


class MaxPool2d(_Pool2d):
    name = "max_pool2d"

    def forward(self, ctx, x):
        windows = self._windows(ctx, x)
        kh, kw = self.kernel
        flat = windows.reshape(*windows.shape[:-2], kh * kw)
        arg = flat.argmax(axis=-1)
        ctx["arg"] = arg
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, ctx, grad):
        kh, kw = self.kernel
        arg = ctx["arg"]
        routed = np.zeros(grad.shape + (kh, kw), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                routed[..., i, j] = np.where(arg == i * kw + j, grad, 0.0)
        out = np.zeros(ctx["shape"], dtype=grad.dtype)
        _scatter_windows(out, routed, kh, kw, *self.stride)
        return (out,)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


@dataclass
class RunningStats:
    """Per-channel running mean/variance, updated by train-mode batch norm."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, channels: int, dtype: Any = np.float64) -> "RunningStats":
        return cls(mean=np.zeros(channels, dtype=dtype), var=np.ones(channels, dtype=dtype))


class BatchNorm(Function):
    name = "batch_norm"

    def __init__(
        self,
        mode: Literal["train", "infer"],
        running: RunningStats,
        eps: float = BN_EPSILON,
        momentum: float = BN_MOMENTUM,
    ) -> None:
        if mode not in ("train", "infer"):
            raise TensorError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
        self.mode, self.running, self.eps, self.momentum = mode, running, eps, momentum

    def forward(self, ctx, x, gamma, beta):
        if x.ndim != 4:
            raise TensorError(f"batch_norm expects [N, C, H, W], got {x.shape}")
        n, c, h, w = x.shape
        if n * h * w == 0:
            raise TensorError(f"batch_norm got zero extent input {x.shape}")
        if gamma.shape != (c,) or beta.shape != (c,):
            raise TensorError(f"batch_norm gamma/beta must have shape ({c},)")
        axes = (0, 2, 3)
        if self.mode == "train":
            count = n * h * w
            if count < 2:
                raise TensorError(f"batch_norm train mode needs N*H*W >= 2, got {count}")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            unbiased = var * count / (count - 1)
            self.running.mean[...] = self.momentum * self.running.mean + (1 - self.momentum) * mean
            self.running.var[...] = self.momentum * self.running.var + (1 - self.momentum) * unbiased
        else:
            mean, var = self.running.mean, self.running.var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        ctx.update(x_hat=x_hat, inv_std=inv_std, gamma=gamma)
        return gamma[None, :, None, None] * x_hat + beta[None, :, None, None]

    def backward(self, ctx, grad):
        x_hat, inv_std, gamma = ctx["x_hat"], ctx["inv_std"], ctx["gamma"]
        axes = (0, 2, 3)
        grad_gamma = (grad * x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        g_hat = grad * gamma[None, :, None, None]
        scale = inv_std[None, :, None, None]
        if self.mode == "infer":
            return g_hat * scale, grad_gamma, grad_beta
        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        grad_x = scale / count * (
            count * g_hat
            - g_hat.sum(axis=axes, keepdims=True)
            - x_hat * (g_hat * x_hat).sum(axis=axes, keepdims=True)
        )
        return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Public helpers
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add()(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul()(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale(factor)(x)


def sum_all(x: Tensor) -> Tensor:
    return SumAll()(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape(tuple(shape))(x)


def relu(x: Tensor) -> Tensor:
    return ReLU()(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax(axis)(x)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax(axis)(x)


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    return Concat(axis)(a, b)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return SliceAxis(axis, start, stop)(x)


def center_crop2d(x: Tensor, height: int, width: int) -> Tensor:
    if x.shape[-2:] == (height, width):
        return x
    return CenterCrop2d(height, width)(x)


def upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    if factor < 1:
        raise TensorError(f"Upsampling factor must be >= 1, got {factor}")
    return Upsample2d(factor)(x)


def pick(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    return Pick(index, axis)(x)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    return WeightedSum(weights)(x)


def cross_entropy_from_logits(logits: Tensor, target_index: Any) -> Tensor:
    """Mean cross-entropy of [N, K] (or [K]) logits against integer targets."""
    return CrossEntropyFromLogits(np.atleast_1d(target_index))(logits)


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    return FullyConnected()(x, weights, bias)


def conv2d(x: Tensor, weights: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    """
    2D cross-correlation of [N, C, H, W] (or [C, H, W]) input.

    Raises:
        TensorError: On any dimension mismatch
    """
    if x.ndim == 3:
        batched = reshape(x, (1,) + x.shape)
        out = conv2d(batched, weights, bias, spec)
        return reshape(out, out.shape[1:])
    inputs = (x, weights) if bias is None else (x, weights, bias)
    return Conv2d(spec)(*inputs)


def mean_pool2d(x: Tensor, kernel: tuple[int, int], stride: tuple[int, int]) -> Tensor:
    return MeanPool2d(tuple(kernel), tuple(stride))(x)


def max_pool2d(x: Tensor, kernel: tuple[int, int], stride: tuple[int, int]) -> Tensor:
    return MaxPool2d(tuple(kernel), tuple(stride))(x)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: Literal["train", "infer"],
    running_stats: RunningStats,
    eps: float = BN_EPSILON,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    return BatchNorm(mode, running_stats, eps, momentum)(x, gamma, beta)
