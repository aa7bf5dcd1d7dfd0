"""Layer kernels: convolution, pooling, normalization, attention primitives.

Every public function validates shapes, then dispatches to a :class:`Function`
subclass holding the numpy forward and backward kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ShapeError
from .tensor import Function, Mode, Tensor


def _require_rank(x: Tensor, rank: int, what: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{what} expects a rank-{rank} tensor, got shape {x.shape}")


def _normalize_axes(axes: Sequence[int], ndim: int) -> Tuple[int, ...]:
    axes = tuple(axes)
    if not axes:
        raise ShapeError("axis set must not be empty")
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    resolved = tuple(sorted({axis % ndim for axis in axes}))
    if len(resolved) != len(axes):
        raise ShapeError(f"duplicate axes in {axes}")
    return resolved


# ------------------------------------------------------------------ convolution


class SeparableConv2d(Function):
    def forward(self, x, depthwise, pointwise, bias):
        _, _, t, v = x.shape
        _, kt, kv = depthwise.shape
        self.pad = (kt // 2, kv // 2)
        self.xp = np.pad(x, ((0, 0), (0, 0), (self.pad[0], self.pad[0]), (self.pad[1], self.pad[1])))
        self.depthwise, self.pointwise = depthwise, pointwise
        self.out_tv = (t, v)
        y = np.zeros_like(x)
        for a in range(kt):
            for b in range(kv):
                y += self.xp[:, :, a:a + t, b:b + v] * depthwise[None, :, a, b, None, None]
        self.y = y
        return np.einsum("oc,nctv->notv", pointwise, y) + bias[None, :, None, None]

    def backward(self, grad):
        t, v = self.out_tv
        _, kt, kv = self.depthwise.shape
        grad_bias = grad.sum(axis=(0, 2, 3))
        grad_pointwise = np.einsum("notv,nctv->oc", grad, self.y)
        grad_y = np.einsum("notv,oc->nctv", grad, self.pointwise)
        grad_depthwise = np.zeros_like(self.depthwise)
        grad_xp = np.zeros_like(self.xp)
        for a in range(kt):
            for b in range(kv):
                window = self.xp[:, :, a:a + t, b:b + v]
                grad_depthwise[:, a, b] = (grad_y * window).sum(axis=(0, 2, 3))
                grad_xp[:, :, a:a + t, b:b + v] += grad_y * self.depthwise[None, :, a, b, None, None]
        pt, pv = self.pad
        grad_x = grad_xp[:, :, pt:pt + t, pv:pv + v]
        return grad_x, grad_depthwise, grad_pointwise, grad_bias


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor, bias: Tensor) -> Tensor:
    """Depthwise (T, V) convolution with zero "same" padding, then a 1x1 channel mix and bias.

    Shapes: x [N, Cin, T, V], depthwise [Cin, kT, kV], pointwise [Cout, Cin], bias [Cout].
    """
    _require_rank(x, 4, "separable_conv2d")
    if depthwise.ndim != 3 or depthwise.shape[0] != x.shape[1]:
        raise ShapeError(f"depthwise kernel {depthwise.shape} does not match input channels {x.shape[1]}")
    if depthwise.shape[1] % 2 == 0 or depthwise.shape[2] % 2 == 0:
        raise ShapeError(f"depthwise kernel size must be odd, got {depthwise.shape[1:]}")
    if pointwise.ndim != 2 or pointwise.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise kernel {pointwise.shape} does not match input channels {x.shape[1]}")
    if bias.shape != (pointwise.shape[0],):
        raise ShapeError(f"bias {bias.shape} does not match output channels {pointwise.shape[0]}")
    return SeparableConv2d.apply(x, depthwise, pointwise, bias)


class PointwiseConv(Function):
    def forward(self, x, weight, bias):
        self.x, self.weight = x, weight
        return np.einsum("oc,nctv->notv", weight, x) + bias[None, :, None, None]

    def backward(self, grad):
        return (
            np.einsum("notv,oc->nctv", grad, self.weight),
            np.einsum("notv,nctv->oc", grad, self.x),
            grad.sum(axis=(0, 2, 3)),
        )


def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """1x1 convolution mixing channels of x [N, Cin, T, V] with weight [Cout, Cin]."""
    _require_rank(x, 4, "pointwise_conv")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"pointwise weight {weight.shape} / bias {bias.shape} do not fit input {x.shape}")
    return PointwiseConv.apply(x, weight, bias)


class ChannelConv1d(Function):
    def forward(self, s, kernel):
        k = kernel.shape[0]
        self.pad = k // 2
        self.sp = np.pad(s, ((0, 0), (self.pad, self.pad)))
        self.kernel = kernel
        c = s.shape[1]
        out = np.zeros_like(s)
        for a in range(k):
            out += self.sp[:, a:a + c] * kernel[a]
        return out

    def backward(self, grad):
        c = grad.shape[1]
        grad_sp = np.zeros_like(self.sp)
        grad_kernel = np.zeros_like(self.kernel)
        for a in range(self.kernel.shape[0]):
            grad_kernel[a] = (grad * self.sp[:, a:a + c]).sum()
            grad_sp[:, a:a + c] += grad * self.kernel[a]
        return grad_sp[:, self.pad:self.pad + c], grad_kernel


def channel_conv1d(s: Tensor, kernel: Tensor) -> Tensor:
    """Single in/out channel 1-D convolution along the channel axis of s [N, C], same padding, no bias."""
    _require_rank(s, 2, "channel_conv1d")
    if kernel.ndim != 1 or kernel.shape[0] % 2 == 0:
        raise ShapeError(f"refinement kernel must be 1-D with odd length, got {kernel.shape}")
    return ChannelConv1d.apply(s, kernel)


# ---------------------------------------------------------------------- pooling


class Mean(Function):
    def forward(self, x, axes=()):
        self.shape, self.axes = x.shape, axes
        self.count = int(np.prod([x.shape[axis] for axis in axes]))
        return np.asarray(x.mean(axis=axes))

    def backward(self, grad):
        grad = np.expand_dims(grad, self.axes) / self.count
        return (np.broadcast_to(grad, self.shape).copy(),)


def avg_pool_axes(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Arithmetic mean over ``axes``; those axes are removed from the shape."""
    return Mean.apply(x, axes=_normalize_axes(axes, x.ndim))


def adaptive_bins(length: int, bins: int) -> List[Tuple[int, int]]:
    """Floor-formula partition of ``range(length)`` into ``bins`` contiguous half-open bins.

    An empty bin (only possible when length < bins) is widened to its start element.
    """
    if length < 1:
        raise ShapeError(f"cannot pool an axis of length {length}")
    spans = []
    for i in range(bins):
        start = (i * length) // bins
        end = max(((i + 1) * length) // bins, start + 1)
        spans.append((start, end))
    return spans


def pooling_matrix(length: int, bins: int, dtype) -> np.ndarray:
    matrix = np.zeros((bins, length), dtype=dtype)
    for i, (start, end) in enumerate(adaptive_bins(length, bins)):
        matrix[i, start:end] = 1.0 / (end - start)
    return matrix


def _apply_along(x: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(x, matrix, axes=([axis], [1])), -1, axis)


class AdaptiveAvgPool(Function):
    def forward(self, x, axes=(), out_sizes=()):
        self.axes = axes
        self.matrices = [pooling_matrix(x.shape[axis], size, x.dtype) for axis, size in zip(axes, out_sizes)]
        out = x
        for axis, matrix in zip(axes, self.matrices):
            out = _apply_along(out, matrix, axis)
        return out

    def backward(self, grad):
        for axis, matrix in zip(self.axes, self.matrices):
            grad = _apply_along(grad, matrix.T, axis)
        return (grad,)


def adaptive_avg_pool(x: Tensor, axes: Sequence[int] = (1, 2), out_sizes: Sequence[int] = (4, 4)) -> Tensor:
    """Adaptive average pooling of the named axes to ``out_sizes`` bins each."""
    resolved = tuple(axis % x.ndim for axis in axes)
    if len(resolved) != len(tuple(out_sizes)) or len(set(resolved)) != len(resolved):
        raise ShapeError(f"axes {axes} and out_sizes {out_sizes} do not pair up")
    _normalize_axes(resolved, x.ndim)
    for axis in resolved:
        if x.shape[axis] < 1:
            raise ShapeError(f"cannot pool an axis of length {x.shape[axis]}")
    return AdaptiveAvgPool.apply(x, axes=resolved, out_sizes=tuple(out_sizes))


# ------------------------------------------------------------- nonlinearities


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


def pointwise_unary(x: Tensor, kind: str) -> Tensor:
    """Elementwise ``relu`` or ``sigmoid``."""
    if kind == "relu":
        return ReLU.apply(x)
    if kind == "sigmoid":
        return Sigmoid.apply(x)
    raise ValueError(f"Unknown pointwise function: {kind}")


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


class Softmax(Function):
    def forward(self, x):
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        self.out = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        dot = (grad * self.out).sum(axis=-1, keepdims=True)
        return (self.out * (grad - dot),)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Max-subtracted softmax along the last axis."""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    return Softmax.apply(x)


class Dropout(Function):
    def forward(self, x, p=0.0, rng=None):
        self.mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


def dropout(x: Tensor, p: float, mode: Mode, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) in training, identity in eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if Mode(mode) is Mode.EVAL or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit random generator")
    return Dropout.apply(x, p=p, rng=rng)


# -------------------------------------------------------------- normalization


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer (buffers, not parameters)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


class BatchNorm2dTrain(Function):
    def forward(self, x, gamma, beta, state=None):
        axes = (0, 2, 3)
        count = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        self.inv_std = 1.0 / np.sqrt(var + state.eps)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma, self.count = gamma, count
        m = state.momentum
        state.running_mean[...] = (1.0 - m) * state.running_mean + m * mean
        state.running_var[...] = (1.0 - m) * state.running_var + m * var * count / (count - 1)
        return gamma[None, :, None, None] * self.xhat + beta[None, :, None, None]

    def backward(self, grad):
        axes = (0, 2, 3)
        grad_gamma = (grad * self.xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_xhat = grad * self.gamma[None, :, None, None]
        sum_g = grad_xhat.sum(axis=axes)[None, :, None, None]
        sum_gx = (grad_xhat * self.xhat).sum(axis=axes)[None, :, None, None]
        grad_x = (self.inv_std[None, :, None, None] / self.count) * (
            self.count * grad_xhat - sum_g - self.xhat * sum_gx
        )
        return grad_x, grad_gamma, grad_beta


class BatchNorm2dEval(Function):
    def forward(self, x, gamma, beta, state=None):
        self.inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.dtype)
        self.xhat = (x - state.running_mean[None, :, None, None].astype(x.dtype)) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        return gamma[None, :, None, None] * self.xhat + beta[None, :, None, None]

    def backward(self, grad):
        axes = (0, 2, 3)
        return (
            grad * (self.gamma * self.inv_std)[None, :, None, None],
            (grad * self.xhat).sum(axis=axes),
            grad.sum(axis=axes),
        )


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: Mode) -> Tensor:
    """Per-channel batch normalization of x [N, C, T, V] over (N, T, V)."""
    _require_rank(x, 4, "batchnorm2d")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,) or state.running_mean.shape != (channels,):
        raise ShapeError(f"batch-norm parameters do not match {channels} channels")
    if Mode(mode) is Mode.TRAIN:
        if x.shape[0] * x.shape[2] * x.shape[3] < 2:
            raise ShapeError("training-mode batch norm needs at least two values per channel")
        return BatchNorm2dTrain.apply(x, gamma, beta, state=state)
    return BatchNorm2dEval.apply(x, gamma, beta, state=state)


# ------------------------------------------------------------- dense algebra


class Linear(Function):
    def forward(self, x, weight, bias):
        self.x, self.weight = x, weight
        return x @ weight.T + bias

    def backward(self, grad):
        din, dout = self.weight.shape[1], self.weight.shape[0]
        grad_x = grad @ self.weight
        grad_weight = grad.reshape(-1, dout).T @ self.x.reshape(-1, din)
        grad_bias = grad.reshape(-1, dout).sum(axis=0)
        return grad_x, grad_weight, grad_bias


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map along the trailing axis: x [..., Din] @ weight[Dout, Din].T + bias."""
    if weight.ndim != 2 or x.ndim < 1 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    return Linear.apply(x, weight, bias)


class BatchedOuter(Function):
    def forward(self, q, k):
        self.q, self.k = q, k
        return q[:, :, None] * k[:, None, :]

    def backward(self, grad):
        return np.einsum("nij,nj->ni", grad, self.k), np.einsum("nij,ni->nj", grad, self.q)


def batched_outer(q: Tensor, k: Tensor) -> Tensor:
    """out[n, i, j] = q[n, i] * k[n, j]."""
    if q.ndim != 2 or q.shape != k.shape:
        raise ShapeError(f"batched_outer needs matching [N, V] inputs, got {q.shape} and {k.shape}")
    return BatchedOuter.apply(q, k)


class ApplyAttention(Function):
    def forward(self, f, m):
        self.f, self.m = f, m
        return np.einsum("nctj,nij->ncti", f, m)

    def backward(self, grad):
        return np.einsum("ncti,nij->nctj", grad, self.m), np.einsum("ncti,nctj->nij", grad, self.f)


def attend_frames(f: Tensor, m: Tensor) -> Tensor:
    """For every (n, c, t): out[n, c, t, :] = f[n, c, t, :] @ m[n].T."""
    _require_rank(f, 4, "attend_frames")
    v = f.shape[3]
    if m.shape != (f.shape[0], v, v):
        raise ShapeError(f"attention map {m.shape} does not match features {f.shape}")
    return ApplyAttention.apply(f, m)


# ---------------------------------------------------------- slicing / joining


class SliceAxis(Function):
    def forward(self, x, axis=0, start=0, stop=0):
        self.shape, self.axis, self.start, self.stop = x.shape, axis, start, stop
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, stop)
        return x[tuple(index)].copy()

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        index = [slice(None)] * len(self.shape)
        index[self.axis] = slice(self.start, self.stop)
        out[tuple(index)] = grad
        return (out,)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _normalize_axes((axis,), x.ndim)[0]
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis of length {x.shape[axis]}")
    return SliceAxis.apply(x, axis=axis, start=start, stop=stop)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = _normalize_axes((axis,), tensors[0].ndim)[0]
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(reference) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, reference)) if i != axis
        ):
            raise ShapeError(f"cannot concatenate shapes {reference} and {t.shape} on axis {axis}")
    return Concat.apply(*tensors, axis=axis)
