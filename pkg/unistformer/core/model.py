"""UniSTFormer: joint embedding, stacked attention blocks, pooling and classifier."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .attention import PoolingVariant
from .block import BlockConfig, BlockParams, block_forward
from .exceptions import ConfigError, ShapeError
from .ops import avg_pool_axes, linear, pointwise_conv
from .skeleton import SkeletonGraph, chain_graph, ntu_graph
from .tensor import Mode, Tensor, get_default_dtype, uniform_parameter

logger = logging.getLogger(__name__)

FULL_SCHEDULE = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
FULL_BLOCKS = len(FULL_SCHEDULE)


@dataclass(frozen=True)
class ModelConfig:
    graph: SkeletonGraph = field(default_factory=ntu_graph)
    in_channels: int = 3
    num_classes: int = 60
    embed_dim: int = 64
    channel_schedule: Tuple[int, ...] = FULL_SCHEDULE
    kernel: Tuple[int, int] = (3, 3)
    mlp_hidden: int = 128
    dropout: float = 0.1
    eca_kernel: int = 3
    variant: PoolingVariant = PoolingVariant.COMBINED
    joint_embedding: bool = True
    alpha_init: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(int(c) for c in self.channel_schedule))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        try:
            object.__setattr__(self, "variant", PoolingVariant(self.variant))
        except ValueError as exc:
            raise ConfigError(f"unknown pooling variant {self.variant!r}") from exc
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.in_channels < 1 or self.embed_dim < 1:
            raise ConfigError("in_channels and embed_dim must be positive")
        for width in self.channel_schedule:
            if width < 2 or width % 2:
                raise ConfigError(f"every block width must be even and positive, got {width}")
        # BlockConfig validates kernels, hidden width and dropout.
        self.block_configs()

    @property
    def num_joints(self) -> int:
        return self.graph.num_joints

    @property
    def num_blocks(self) -> int:
        return len(self.channel_schedule)

    @property
    def out_channels(self) -> int:
        return self.channel_schedule[-1] if self.channel_schedule else self.embed_dim

    def block_configs(self) -> List[BlockConfig]:
        configs, cin = [], self.embed_dim
        for cout in self.channel_schedule:
            configs.append(
                BlockConfig(
                    in_channels=cin,
                    out_channels=cout,
                    num_joints=self.num_joints,
                    kernel=self.kernel,
                    mlp_hidden=self.mlp_hidden,
                    dropout=self.dropout,
                    eca_kernel=self.eca_kernel,
                    variant=self.variant,
                    alpha_init=self.alpha_init,
                )
            )
            cin = cout
        return configs

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "embed_dim": self.embed_dim,
            "channel_schedule": list(self.channel_schedule),
            "kernel": list(self.kernel),
            "mlp_hidden": self.mlp_hidden,
            "dropout": self.dropout,
            "eca_kernel": self.eca_kernel,
            "variant": self.variant.value,
            "joint_embedding": self.joint_embedding,
            "alpha_init": self.alpha_init,
        }

    @classmethod
    def from_dict(cls, payload: dict, base: Optional["ModelConfig"] = None) -> "ModelConfig":
        """Build from JSON-style keys; keys not given fall back to ``base`` (default config)."""
        if not isinstance(payload, dict):
            raise ConfigError(f"model config must be an object, got {type(payload).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        values = dict(payload)
        if "graph" in values:
            values["graph"] = SkeletonGraph.from_dict(values["graph"])
        try:
            return dataclasses.replace(base or cls(), **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model config: {exc}") from exc


def full_config(**changes) -> ModelConfig:
    """The ten-block NTU configuration."""
    config = ModelConfig().replace(**changes)
    if config.num_blocks != FULL_BLOCKS:
        raise ConfigError(f"full configuration stacks {FULL_BLOCKS} blocks, got {config.num_blocks}")
    return config


def tiny_config(
    num_joints: Optional[int] = None,
    width: int = 16,
    blocks: int = 2,
    num_classes: int = 4,
    **changes,
) -> ModelConfig:
    """Desk-scale configuration; ``num_joints`` switches to a chain graph instead of NTU."""
    graph = chain_graph(num_joints) if num_joints else ntu_graph()
    config = ModelConfig(
        graph=graph,
        num_classes=num_classes,
        embed_dim=width,
        channel_schedule=(width,) * blocks,
        mlp_hidden=32,
    )
    return config.replace(**changes) if changes else config


@dataclass
class ModelParams:
    config: ModelConfig
    lift_weight: Tensor
    lift_bias: Tensor
    joint_embedding: Optional[Tensor]
    blocks: List[BlockParams]
    head_weight: Tensor
    head_bias: Tensor

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        """Learnable tensors in declaration order (the checkpoint order)."""
        yield "embed.lift.weight", self.lift_weight
        yield "embed.lift.bias", self.lift_bias
        if self.joint_embedding is not None:
            yield "embed.joint.weight", self.joint_embedding
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"blocks.{i}")
        yield "head.weight", self.head_weight
        yield "head.bias", self.head_bias

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for i, block in enumerate(self.blocks):
            yield from block.named_buffers(f"blocks.{i}")

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def checksum(self) -> str:
        """SHA-256 over every parameter and buffer value."""
        digest = hashlib.sha256()
        for name, tensor in self.named_parameters():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        for name, buffer in self.named_buffers():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(buffer).tobytes())
        return digest.hexdigest()


def init_params(config: ModelConfig, rng: Optional[np.random.Generator], dtype=None) -> ModelParams:
    """Fresh parameters for ``config``; with ``rng=None`` the random draws are replaced by zeros."""
    dtype = dtype or get_default_dtype()
    e, v = config.embed_dim, config.num_joints

    def uniform(shape, fan_in):
        return uniform_parameter(shape, fan_in, rng, dtype)

    lift_weight = uniform((e, config.in_channels), config.in_channels)
    lift_bias = uniform((e,), config.in_channels)
    joint = None
    if config.joint_embedding:
        values = np.zeros((e, v)) if rng is None else rng.normal(0.0, 0.02, size=(e, v))
        joint = Tensor(values, requires_grad=True, dtype=dtype)
    blocks = [BlockParams.init(bc, config.graph, rng, dtype) for bc in config.block_configs()]
    head_weight = uniform((config.num_classes, config.out_channels), config.out_channels)
    head_bias = uniform((config.num_classes,), config.out_channels)
    params = ModelParams(config, lift_weight, lift_bias, joint, blocks, head_weight, head_bias)
    logger.debug("Initialized %d blocks, %d learnable values", len(blocks), sum(t.size for t in params.parameters()))
    return params


def embed(x: Tensor, params: ModelParams) -> Tensor:
    """Pointwise lift to embed_dim channels plus the per-joint embedding broadcast over (N, T)."""
    config = params.config
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ShapeError(f"model expects [N, {config.in_channels}, T, V] input, got {x.shape}")
    if x.shape[3] != config.num_joints:
        raise ShapeError(f"input has {x.shape[3]} joints, graph has {config.num_joints}")
    lifted = pointwise_conv(x, params.lift_weight, params.lift_bias)
    if params.joint_embedding is None:
        return lifted
    return lifted + params.joint_embedding.reshape(1, config.embed_dim, 1, config.num_joints)


def forward(
    x: Tensor,
    params: ModelParams,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[List[Dict[str, Tensor]]] = None,
) -> Tensor:
    """Logits [N, K]; softmax is left to the loss and to :func:`predict`.

    ``trace`` (a list) receives one dict of intermediates per block.
    """
    h = embed(x, params)
    for block in params.blocks:
        block_trace = {} if trace is not None else None
        h = block_forward(h, block, mode, rng, block_trace)
        if trace is not None:
            trace.append(block_trace)
    pooled = avg_pool_axes(h, (2, 3))
    return linear(pooled, params.head_weight, params.head_bias)


def predict(x: Tensor, params: ModelParams) -> np.ndarray:
    """Eval-mode class indices; ties go to the lowest index."""
    return argmax_rows(forward(x, params, Mode.EVAL).data)


def argmax_rows(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)


class UniSTFormer:
    """Stateful wrapper: parameters, mode and the dropout random stream."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=None, params: Optional[ModelParams] = None):
        self.config = config
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed), dtype)
        # Dropout draws from its own stream so it does not depend on initialization.
        self.rng = np.random.default_rng([seed, 1])
        self.mode = Mode.TRAIN

    def train(self) -> "UniSTFormer":
        self.mode = Mode.TRAIN
        return self

    def eval(self) -> "UniSTFormer":
        self.mode = Mode.EVAL
        return self

    def __call__(self, x, trace: Optional[list] = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x, dtype=self.params.lift_weight.dtype)
        return forward(x, self.params, self.mode, self.rng, trace)

    def predict(self, x) -> np.ndarray:
        if not isinstance(x, Tensor):
            x = Tensor(x, dtype=self.params.lift_weight.dtype)
        return predict(x, self.params)

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return self.params.named_parameters()

    def parameters(self) -> List[Tensor]:
        return self.params.parameters()

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def __repr__(self) -> str:
        return (
            f"UniSTFormer(blocks={self.config.num_blocks}, joints={self.config.num_joints}, "
            f"classes={self.config.num_classes}, params={self.num_parameters()})"
        )
