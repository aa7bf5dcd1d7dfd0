"""Multi-scale pooling attention: the dynamic joint-joint map of each block.

The input features are split along channels into a query half and a key half.
Each half is summarised per joint twice, by a global mean over (channel, time)
and by the mean of a 4x4 adaptive pool over the same axes; the two descriptors
are concatenated and projected back to one value per joint by a two-layer MLP.
The outer product of the query and key projections, softmax-normalised along
the last axis, is the attention map.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Tuple

import numpy as np

from .exceptions import ConfigError, ShapeError
from .ops import (
    adaptive_avg_pool,
    avg_pool_axes,
    batched_outer,
    concat,
    dropout,
    linear,
    relu,
    slice_axis,
    softmax_lastdim,
)
from .tensor import Mode, Tensor, get_default_dtype, uniform_parameter

LOCAL_BINS = 4


class PoolingVariant(str, Enum):
    COMBINED = "combined"
    GLOBAL_ONLY = "global_only"
    LOCAL_ONLY = "local_only"


@dataclass(frozen=True)
class AttentionConfig:
    num_joints: int
    hidden: int = 128
    dropout: float = 0.1
    variant: PoolingVariant = PoolingVariant.COMBINED

    def __post_init__(self):
        object.__setattr__(self, "variant", PoolingVariant(self.variant))
        if self.num_joints < 1:
            raise ConfigError(f"num_joints must be positive, got {self.num_joints}")
        if self.hidden < 1:
            raise ConfigError(f"MLP hidden width must be positive, got {self.hidden}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def input_width(self) -> int:
        return input_width(self.variant, self.num_joints)


def input_width(variant: PoolingVariant, num_joints: int) -> int:
    return 2 * num_joints if PoolingVariant(variant) is PoolingVariant.COMBINED else num_joints


@dataclass
class MLPBranch:
    """Linear(in, H) -> ReLU -> dropout -> Linear(H, V)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(
        cls, in_width: int, hidden: int, out_width: int, rng: Optional[np.random.Generator], dtype=None
    ) -> "MLPBranch":
        dtype = dtype or get_default_dtype()

        def uniform(shape, fan_in):
            return uniform_parameter(shape, fan_in, rng, dtype)

        return cls(
            w1=uniform((hidden, in_width), in_width),
            b1=uniform((hidden,), in_width),
            w2=uniform((out_width, hidden), hidden),
            b2=uniform((out_width,), hidden),
        )

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        for name in ("w1", "b1", "w2", "b2"):
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class MSPAttentionParams:
    config: AttentionConfig
    mlp_q: MLPBranch
    mlp_k: MLPBranch

    @classmethod
    def init(cls, config: AttentionConfig, rng: Optional[np.random.Generator], dtype=None) -> "MSPAttentionParams":
        width, v = config.input_width, config.num_joints
        return cls(
            config=config,
            mlp_q=MLPBranch.init(width, config.hidden, v, rng, dtype),
            mlp_k=MLPBranch.init(width, config.hidden, v, rng, dtype),
        )

    def named_parameters(self, prefix: str = "attn") -> Iterator[Tuple[str, Tensor]]:
        yield from self.mlp_q.named_parameters(f"{prefix}.mlp_q")
        yield from self.mlp_k.named_parameters(f"{prefix}.mlp_k")


def split_qk(f: Tensor) -> Tuple[Tensor, Tensor]:
    """First C/2 channels are the query half, the rest the key half."""
    if f.ndim != 4:
        raise ShapeError(f"split_qk expects [N, C, T, V], got {f.shape}")
    channels = f.shape[1]
    if channels % 2:
        raise ShapeError(f"channel count must be even to split query/key, got {channels}")
    half = channels // 2
    return slice_axis(f, 1, 0, half), slice_axis(f, 1, half, channels)


def pool_global(x: Tensor) -> Tensor:
    """[N, C, T, V] -> [N, V] mean over channels and frames."""
    if x.ndim != 4:
        raise ShapeError(f"pool_global expects [N, C, T, V], got {x.shape}")
    return avg_pool_axes(x, (1, 2))


def pool_local(x: Tensor) -> Tensor:
    """[N, C, T, V] -> adaptive 4x4 pool over (C, T) -> mean of the 16 bins -> [N, V]."""
    if x.ndim != 4:
        raise ShapeError(f"pool_local expects [N, C, T, V], got {x.shape}")
    pooled = adaptive_avg_pool(x, axes=(1, 2), out_sizes=(LOCAL_BINS, LOCAL_BINS))
    return avg_pool_axes(pooled, (1, 2))


def multi_scale_concat(global_desc: Tensor, local_desc: Tensor) -> Tensor:
    if global_desc.ndim != 2 or global_desc.shape != local_desc.shape:
        raise ShapeError(f"descriptors must both be [N, V], got {global_desc.shape} and {local_desc.shape}")
    return concat([global_desc, local_desc], axis=1)


def mlp_project(
    x: Tensor,
    branch: MLPBranch,
    mode: Mode,
    p: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    if x.ndim != 2 or x.shape[1] != branch.w1.shape[1]:
        raise ShapeError(f"MLP expects [N, {branch.w1.shape[1]}] input, got {x.shape}")
    hidden = dropout(relu(linear(x, branch.w1, branch.b1)), p, mode, rng)
    return linear(hidden, branch.w2, branch.b2)


def joint_descriptor(x: Tensor, variant: PoolingVariant) -> Tensor:
    variant = PoolingVariant(variant)
    if variant is PoolingVariant.GLOBAL_ONLY:
        return pool_global(x)
    if variant is PoolingVariant.LOCAL_ONLY:
        return pool_local(x)
    return multi_scale_concat(pool_global(x), pool_local(x))


def variant_attention(
    f: Tensor,
    params: MSPAttentionParams,
    variant: PoolingVariant,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Attention map [N, V, V] built from the descriptor ``variant`` selects.

    Single-scale variants need MLPs of input width V, the combined one 2V.
    """
    variant = PoolingVariant(variant)
    v = params.config.num_joints
    if input_width(variant, v) != params.config.input_width:
        raise ConfigError(f"{variant.value} attention needs MLP input width {input_width(variant, v)}, parameters have {params.config.input_width}")
    if f.ndim != 4 or f.shape[3] != v:
        raise ShapeError(f"attention expects [N, C, T, {v}] features, got {f.shape}")
    q, k = split_qk(f)
    p = params.config.dropout
    q_proj = mlp_project(joint_descriptor(q, variant), params.mlp_q, mode, p, rng)
    k_proj = mlp_project(joint_descriptor(k, variant), params.mlp_k, mode, p, rng)
    return softmax_lastdim(batched_outer(q_proj, k_proj))


def attention_map(
    f: Tensor,
    params: MSPAttentionParams,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Row-stochastic joint-joint map [N, V, V], shared by every frame of a sample."""
    return variant_attention(f, params, params.config.variant, mode, rng)
