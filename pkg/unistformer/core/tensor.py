"""Dense tensors with define-by-run reverse-mode differentiation.

A :class:`Tensor` wraps a C-contiguous numpy array. Operations are
:class:`Function` subclasses; ``Function.apply`` runs the forward kernel on the
raw arrays and records the function as the creator of the output so that
:meth:`Tensor.backward` can replay the chain rule in reverse topological order.
The graph is rebuilt on every forward pass.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from enum import Enum
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import GraphError, NumericError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_DEFAULT_DTYPE = np.dtype(np.float32)


class Mode(str, Enum):
    """Forward-pass mode for layers whose behaviour differs in training."""

    TRAIN = "train"
    EVAL = "eval"


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported dtype: {resolved}. Use float32 or float64")
    _DEFAULT_DTYPE = resolved


@contextmanager
def default_dtype(dtype) -> Iterator[np.dtype]:
    """Temporarily switch the dtype used for new tensors and parameters."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield _DEFAULT_DTYPE
    finally:
        set_default_dtype(previous)


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on numpy arrays and ``backward``, which
    receives dL/d(output) and returns one gradient (or ``None``) per input.
    """

    def __init__(self, *parents: "Tensor"):
        self.parents = parents

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.__name__} produced non-finite values")
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, dtype=out.dtype, _ctx=fn if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum ``grad`` over the axes numpy broadcasting expanded to reach ``shape``."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """A dense array node in the autograd graph.

    Attributes:
        data: the values, C-contiguous, row-major
        requires_grad: whether gradients flow to this tensor
        grad: accumulated dL/d(self) for leaves, same shape as ``data``
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype=None,
        _ctx: Optional[Function] = None,
    ):
        self.data = np.asarray(data, dtype=dtype or get_default_dtype(), order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx = _ctx
        self._released = False

    # ------------------------------------------------------------------ info

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None and not self._released

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------- backprop

    def backward(self, retain_graph: bool = False) -> None:
        """Populate ``grad`` on every ``requires_grad`` leaf reachable from this scalar."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._released:
            raise GraphError("graph already released; run the forward pass again")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor that requires grad")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                grad = np.asarray(grad, dtype=node.dtype).reshape(node.shape)
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

        if not retain_graph:
            for node in topo:
                if node._ctx is not None:
                    node._ctx = None
                    node._released = True

    # ------------------------------------------------------------ operators

    def __add__(self, other) -> "Tensor":
        return Add.apply(self, _as_tensor(other, self.dtype))

    def __radd__(self, other) -> "Tensor":
        return Add.apply(_as_tensor(other, self.dtype), self)

    def __sub__(self, other) -> "Tensor":
        return Add.apply(self, Neg.apply(_as_tensor(other, self.dtype)))

    def __rsub__(self, other) -> "Tensor":
        return Add.apply(_as_tensor(other, self.dtype), Neg.apply(self))

    def __mul__(self, other) -> "Tensor":
        return Mul.apply(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other) -> "Tensor":
        return Mul.apply(_as_tensor(other, self.dtype), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def sum(self, axes: Optional[Sequence[int]] = None) -> "Tensor":
        return Sum.apply(self, axes=axes)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)


def _as_tensor(value, dtype) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def uniform_parameter(shape, fan_in: int, rng: Optional[np.random.Generator], dtype=None) -> Tensor:
    """Learnable tensor drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Without a generator the tensor is zero-filled, for loaders that overwrite every value.
    """
    if rng is None:
        return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return self.unbroadcast(grad * self.b, self.a.shape), self.unbroadcast(grad * self.a, self.b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Sum(Function):
    def forward(self, a, axes=None):
        self.shape = a.shape
        self.axes = None if axes is None else tuple(ax % a.ndim for ax in axes)
        return np.asarray(a.sum(axis=self.axes))

    def backward(self, grad):
        if self.axes is not None:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)
