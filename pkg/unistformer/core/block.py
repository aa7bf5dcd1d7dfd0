"""Unified spatial-temporal attention block."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .attention import AttentionConfig, MSPAttentionParams, PoolingVariant, attention_map
from .exceptions import ConfigError, ShapeError
from .ops import (
    BatchNormState,
    attend_frames,
    avg_pool_axes,
    batchnorm2d,
    channel_conv1d,
    pointwise_conv,
    relu,
    separable_conv2d,
    sigmoid,
)
from .skeleton import SkeletonGraph, build_adjacency
from .tensor import Mode, Tensor, get_default_dtype, uniform_parameter

# Parameter name suffixes excluded from weight decay.
NO_DECAY_SUFFIXES = (".topology.alpha", ".topology.a_init", ".bn.gamma", ".bn.beta")


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    out_channels: int
    num_joints: int
    kernel: Tuple[int, int] = (3, 3)
    mlp_hidden: int = 128
    dropout: float = 0.1
    eca_kernel: int = 3
    variant: PoolingVariant = PoolingVariant.COMBINED
    alpha_init: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        if self.out_channels < 2 or self.out_channels % 2:
            raise ConfigError(f"out_channels must be even and positive, got {self.out_channels}")
        if len(self.kernel) != 2 or any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ConfigError(f"depthwise kernel must be two odd sizes, got {self.kernel}")
        if self.eca_kernel < 1 or self.eca_kernel % 2 == 0:
            raise ConfigError(f"refinement kernel size must be odd, got {self.eca_kernel}")
        if not np.isfinite(self.alpha_init):
            raise ConfigError("alpha_init must be finite")

    @property
    def has_residual_proj(self) -> bool:
        return self.in_channels != self.out_channels

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(self.num_joints, self.mlp_hidden, self.dropout, self.variant)


@dataclass
class BlockParams:
    config: BlockConfig
    depthwise: Tensor
    pointwise: Tensor
    conv_bias: Tensor
    attn: MSPAttentionParams
    alpha: Tensor
    a_init: Tensor
    eca_kernel: Tensor
    bn_gamma: Tensor
    bn_beta: Tensor
    bn_state: BatchNormState
    residual_weight: Optional[Tensor] = None
    residual_bias: Optional[Tensor] = None

    def __post_init__(self):
        v = self.config.num_joints
        if self.a_init.shape != (v, v):
            raise ShapeError(f"a_init must be [{v}, {v}], got {self.a_init.shape}")
        if (self.residual_weight is not None) != self.config.has_residual_proj:
            raise ShapeError("residual projection must exist exactly when channel counts differ")

    @classmethod
    def init(
        cls, config: BlockConfig, graph: SkeletonGraph, rng: Optional[np.random.Generator], dtype=None
    ) -> "BlockParams":
        if graph.num_joints != config.num_joints:
            raise ConfigError(f"graph has {graph.num_joints} joints, block expects {config.num_joints}")
        dtype = dtype or get_default_dtype()
        cin, cout = config.in_channels, config.out_channels
        kt, kv = config.kernel

        def uniform(shape, fan_in):
            return uniform_parameter(shape, fan_in, rng, dtype)

        def const(values):
            return Tensor(values, requires_grad=True, dtype=dtype)

        params = dict(
            depthwise=uniform((cin, kt, kv), kt * kv),
            pointwise=uniform((cout, cin), cin),
            conv_bias=uniform((cout,), cin),
            attn=MSPAttentionParams.init(config.attention_config(), rng, dtype),
            alpha=const(config.alpha_init),
            a_init=const(build_adjacency(graph, dtype).data.copy()),
            eca_kernel=uniform((config.eca_kernel,), config.eca_kernel),
            bn_gamma=const(np.ones(cout)),
            bn_beta=const(np.zeros(cout)),
            bn_state=BatchNormState.create(cout, dtype),
        )
        if config.has_residual_proj:
            params["residual_weight"] = uniform((cout, cin), cin)
            params["residual_bias"] = uniform((cout,), cin)
        return cls(config=config, **params)

    def named_parameters(self, prefix: str = "block") -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.conv.depthwise", self.depthwise
        yield f"{prefix}.conv.pointwise", self.pointwise
        yield f"{prefix}.conv.bias", self.conv_bias
        yield from self.attn.named_parameters(f"{prefix}.attn")
        yield f"{prefix}.topology.alpha", self.alpha
        yield f"{prefix}.topology.a_init", self.a_init
        yield f"{prefix}.refine.kernel", self.eca_kernel
        yield f"{prefix}.bn.gamma", self.bn_gamma
        yield f"{prefix}.bn.beta", self.bn_beta
        if self.residual_weight is not None:
            yield f"{prefix}.residual.weight", self.residual_weight
            yield f"{prefix}.residual.bias", self.residual_bias

    def named_buffers(self, prefix: str = "block") -> Iterator[Tuple[str, np.ndarray]]:
        yield f"{prefix}.bn.running_mean", self.bn_state.running_mean
        yield f"{prefix}.bn.running_var", self.bn_state.running_var


def fuse_topology(a_dyn: Tensor, a_init: Tensor, alpha: Tensor) -> Tensor:
    """M = alpha * A + (1 - alpha) * A_init, with A_init broadcast over the batch."""
    if a_dyn.ndim != 3 or a_dyn.shape[1:] != a_init.shape or a_init.shape[0] != a_init.shape[1]:
        raise ShapeError(f"cannot fuse attention {a_dyn.shape} with prior {a_init.shape}")
    if alpha.size != 1:
        raise ShapeError(f"alpha must be a scalar, got shape {alpha.shape}")
    alpha = alpha.reshape(())
    return alpha * a_dyn + (1.0 - alpha) * a_init


def apply_attention(f: Tensor, m: Tensor) -> Tensor:
    """out[n, c, t, i] = sum_j f[n, c, t, j] * m[n, i, j]."""
    return attend_frames(f, m)


def channel_refine(f: Tensor, eca_kernel: Tensor) -> Tensor:
    """f + f * sigmoid(conv1d(mean_(T,V)(f))), the gate broadcast over frames and joints."""
    if f.ndim != 4:
        raise ShapeError(f"channel_refine expects [N, C, T, V], got {f.shape}")
    n, c = f.shape[:2]
    weights = sigmoid(channel_conv1d(avg_pool_axes(f, (2, 3)), eca_kernel))
    return f + f * weights.reshape(n, c, 1, 1)


def block_forward(
    x: Tensor,
    params: BlockParams,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[Dict[str, Tensor]] = None,
) -> Tensor:
    """Separable conv, attention, topology fusion, per-frame mixing, refinement, BN + residual + ReLU.

    When ``trace`` is given it receives every intermediate under the keys
    ``F``, ``A``, ``M``, ``F_prime``, ``F_ref``, ``BN``, ``R`` and ``Y``.
    """
    config = params.config
    if x.ndim != 4 or x.shape[1] != config.in_channels or x.shape[3] != config.num_joints:
        raise ShapeError(
            f"block expects [N, {config.in_channels}, T, {config.num_joints}] input, got {x.shape}"
        )
    features = separable_conv2d(x, params.depthwise, params.pointwise, params.conv_bias)
    a_dyn = attention_map(features, params.attn, mode, rng)
    fused = fuse_topology(a_dyn, params.a_init, params.alpha)
    mixed = apply_attention(features, fused)
    refined = channel_refine(mixed, params.eca_kernel)
    normed = batchnorm2d(refined, params.bn_gamma, params.bn_beta, params.bn_state, mode)
    if params.residual_weight is not None:
        residual = pointwise_conv(x, params.residual_weight, params.residual_bias)
    else:
        residual = x
    out = relu(normed + residual)
    if trace is not None:
        trace.update(F=features, A=a_dyn, M=fused, F_prime=mixed, F_ref=refined, BN=normed, R=residual, Y=out)
    return out
