"""Registered finite-difference checks for every differentiable op, a block and a tiny model.

All checks build float64 tensors. Train-mode dropout re-seeds its generator on
every evaluation so the mask is identical across the perturbed calls.
"""

from __future__ import annotations

from typing import Callable, Dict, List

import numpy as np

from . import ops
from .attention import AttentionConfig, MSPAttentionParams, attention_map
from .block import BlockConfig, BlockParams, block_forward
from .gradcheck import GradCheckReport, finite_diff_check, register_check, worst_of
from .model import forward, init_params, tiny_config
from .skeleton import chain_graph
from .tensor import Mode, Tensor, default_dtype
from .training import cross_entropy

SEED = 7


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    """Random values with |x| >= margin, keeping ReLU inputs off their kink."""
    magnitude = rng.uniform(margin, 1.0, size=shape)
    return magnitude * rng.choice([-1.0, 1.0], size=shape)


def _check_all(
    name: str,
    build: Callable[[Dict[str, Tensor]], Tensor],
    inputs: Dict[str, Tensor],
    tol: float,
    corrupt: bool,
) -> GradCheckReport:
    """Check d(sum(build * W))/d(input) for every named input; W is a fixed random weight."""
    weights: List[np.ndarray] = []
    rng = np.random.default_rng(SEED + 1)

    def scalar(out: Tensor) -> Tensor:
        if not weights:
            weights.append(rng.normal(size=out.shape))
        return (out * Tensor(weights[0], dtype=out.dtype)).sum()

    reports = []
    for key, tensor in inputs.items():
        reports.append(
            finite_diff_check(lambda _x: scalar(build(inputs)), tensor, tol=tol, corrupt=corrupt, name=key)
        )
    return worst_of(name, reports)


def _leaf(array) -> Tensor:
    return Tensor(array, requires_grad=True)


def _named_leaves(named) -> Dict[str, Tensor]:
    return {name: tensor for name, tensor in named}


def _op_check(name: str, make: Callable[[np.random.Generator], tuple]):
    """Register an op check; ``make`` returns (inputs dict, build function)."""

    def check(tol: float, corrupt: bool) -> GradCheckReport:
        with default_dtype(np.float64):
            inputs, build = make(np.random.default_rng(SEED))
            return _check_all(name, build, inputs, tol, corrupt)

    register_check("op", name)(check)
    return check


_op_check("separable_conv2d", lambda r: (
    {"x": _leaf(r.normal(size=(2, 3, 4, 5))), "depthwise": _leaf(r.normal(size=(3, 3, 3))),
     "pointwise": _leaf(r.normal(size=(2, 3))), "bias": _leaf(r.normal(size=2))},
    lambda t: ops.separable_conv2d(t["x"], t["depthwise"], t["pointwise"], t["bias"]),
))
_op_check("pointwise_conv", lambda r: (
    {"x": _leaf(r.normal(size=(2, 3, 4, 5))), "weight": _leaf(r.normal(size=(4, 3))), "bias": _leaf(r.normal(size=4))},
    lambda t: ops.pointwise_conv(t["x"], t["weight"], t["bias"]),
))
_op_check("channel_conv1d", lambda r: (
    {"s": _leaf(r.normal(size=(2, 6))), "kernel": _leaf(r.normal(size=3))},
    lambda t: ops.channel_conv1d(t["s"], t["kernel"]),
))
_op_check("avg_pool_axes", lambda r: (
    {"x": _leaf(r.normal(size=(2, 4, 6, 5)))},
    lambda t: ops.avg_pool_axes(t["x"], (1, 2)),
))
_op_check("adaptive_avg_pool", lambda r: (
    {"x": _leaf(r.normal(size=(2, 6, 3, 5)))},
    lambda t: ops.adaptive_avg_pool(t["x"], (1, 2), (4, 4)),
))
_op_check("relu", lambda r: (
    {"x": _leaf(_away_from_zero(r, (3, 5)))},
    lambda t: ops.relu(t["x"]),
))
_op_check("sigmoid", lambda r: (
    {"x": _leaf(r.normal(size=(3, 5)))},
    lambda t: ops.sigmoid(t["x"]),
))
_op_check("softmax_lastdim", lambda r: (
    {"x": _leaf(r.normal(size=(3, 5)))},
    lambda t: ops.softmax_lastdim(t["x"]),
))
_op_check("batchnorm2d_train", lambda r: (
    {"x": _leaf(r.normal(size=(2, 3, 4, 2))), "gamma": _leaf(r.normal(size=3)), "beta": _leaf(r.normal(size=3))},
    lambda t: ops.batchnorm2d(t["x"], t["gamma"], t["beta"], ops.BatchNormState.create(3, np.float64), Mode.TRAIN),
))
_op_check("batchnorm2d_eval", lambda r: (
    {"x": _leaf(r.normal(size=(2, 3, 4, 2))), "gamma": _leaf(r.normal(size=3)), "beta": _leaf(r.normal(size=3))},
    lambda t: ops.batchnorm2d(
        t["x"], t["gamma"], t["beta"],
        ops.BatchNormState(np.array([0.1, -0.2, 0.3]), np.array([0.5, 1.5, 2.0])), Mode.EVAL,
    ),
))
_op_check("linear", lambda r: (
    {"x": _leaf(r.normal(size=(3, 7))), "weight": _leaf(r.normal(size=(4, 7))), "bias": _leaf(r.normal(size=4))},
    lambda t: ops.linear(t["x"], t["weight"], t["bias"]),
))
_op_check("batched_outer", lambda r: (
    {"q": _leaf(r.normal(size=(2, 5))), "k": _leaf(r.normal(size=(2, 5)))},
    lambda t: ops.batched_outer(t["q"], t["k"]),
))
_op_check("attend_frames", lambda r: (
    {"f": _leaf(r.normal(size=(1, 2, 3, 4))), "m": _leaf(r.normal(size=(1, 4, 4)))},
    lambda t: ops.attend_frames(t["f"], t["m"]),
))
_op_check("dropout_train", lambda r: (
    {"x": _leaf(r.normal(size=(4, 6)))},
    lambda t: ops.dropout(t["x"], 0.5, Mode.TRAIN, np.random.default_rng(SEED + 2)),
))
_op_check("slice_concat", lambda r: (
    {"a": _leaf(r.normal(size=(2, 4, 3))), "b": _leaf(r.normal(size=(2, 1, 3)))},
    lambda t: ops.concat([ops.slice_axis(t["a"], 1, 1, 3), t["b"]], axis=1),
))
_op_check("elementwise", lambda r: (
    {"a": _leaf(r.normal(size=(2, 3, 1))), "b": _leaf(r.normal(size=(3, 4)))},
    lambda t: (t["a"] * t["b"] - t["b"] + 2.0 * t["a"]).reshape(2, 12),
))
_op_check("cross_entropy", lambda r: (
    {"logits": _leaf(r.normal(size=(4, 3)))},
    lambda t: cross_entropy(t["logits"], [0, 2, 1, 2]),
))


def _attention_inputs(r: np.random.Generator):
    params = MSPAttentionParams.init(AttentionConfig(5, hidden=6, dropout=0.0), r)
    inputs = {"f": _leaf(r.normal(size=(2, 4, 8, 5)))}
    inputs.update(_named_leaves(params.named_parameters("attn")))
    return inputs, lambda t: attention_map(t["f"], params, Mode.EVAL)


_op_check("attention_map", _attention_inputs)


@register_check("block", "block_forward")
def check_block(tol: float, corrupt: bool) -> GradCheckReport:
    with default_dtype(np.float64):
        rng = np.random.default_rng(SEED)
        config = BlockConfig(in_channels=4, out_channels=4, num_joints=5, mlp_hidden=6, dropout=0.25)
        params = BlockParams.init(config, chain_graph(5), rng)
        inputs = {"x": _leaf(rng.normal(size=(1, 4, 6, 5)))}
        inputs.update(_named_leaves(params.named_parameters("block")))
        build = lambda t: block_forward(t["x"], params, Mode.TRAIN, np.random.default_rng(SEED + 2))
        return _check_all("block_forward", build, inputs, tol, corrupt)


@register_check("block", "block_forward_projection")
def check_block_projection(tol: float, corrupt: bool) -> GradCheckReport:
    with default_dtype(np.float64):
        rng = np.random.default_rng(SEED)
        config = BlockConfig(in_channels=3, out_channels=4, num_joints=5, mlp_hidden=6, dropout=0.0)
        params = BlockParams.init(config, chain_graph(5), rng)
        inputs = {"x": _leaf(rng.normal(size=(2, 3, 4, 5)))}
        inputs.update(_named_leaves(params.named_parameters("block")))
        build = lambda t: block_forward(t["x"], params, Mode.EVAL)
        return _check_all("block_forward_projection", build, inputs, tol, corrupt)


@register_check("model", "tiny_model")
def check_model(tol: float, corrupt: bool) -> GradCheckReport:
    with default_dtype(np.float64):
        rng = np.random.default_rng(SEED)
        config = tiny_config(num_joints=5, width=4, blocks=2, num_classes=3, mlp_hidden=6, dropout=0.0)
        params = init_params(config, rng)
        x = _leaf(rng.normal(size=(2, 3, 8, 5)))
        labels = np.array([0, 2])
        inputs = {"x": x}
        inputs.update(_named_leaves(params.named_parameters()))

        def loss(t):
            return cross_entropy(forward(t["x"], params, Mode.TRAIN), labels)

        return _check_all("tiny_model", loss, inputs, tol, corrupt)
