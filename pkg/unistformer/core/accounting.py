"""Closed-form parameter and FLOP accounting for UniSTFormer configurations.

Convention: one multiply-accumulate is 2 FLOPs. Pooling costs 1 FLOP per input
element, nonlinearities and softmax 1 FLOP per output element. Dropout is free.
All FLOP counts are for one forward pass of a single sample (N = 1).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .attention import PoolingVariant, input_width
from .block import BlockConfig
from .exceptions import ConfigError
from .model import ModelConfig, ModelParams, UniSTFormer
from .tensor import Tensor

logger = logging.getLogger(__name__)

FLOP_CONVENTION = (
    "1 MAC = 2 FLOPs; pooling = 1 FLOP per input element; nonlinearities/softmax = 1 FLOP per "
    "output element; dropout = 0 FLOPs; BN running statistics excluded from learnable params; N = 1"
)

HIDDEN_GRID = (32, 64, 128, 256)


@dataclass(frozen=True)
class CostEntry:
    name: str
    params: int
    flops: int
    buffers: int = 0


@dataclass
class CostReport:
    entries: List[CostEntry]
    config: dict
    frames: Optional[int] = None
    joints: Optional[int] = None
    latency_ms: Optional[float] = None
    convention: str = FLOP_CONVENTION
    extra: Dict[str, object] = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    @property
    def total_buffers(self) -> int:
        return sum(e.buffers for e in self.entries)

    def entry(self, name: str) -> CostEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        payload = {
            "convention": self.convention,
            "config": self.config,
            "frames": self.frames,
            "joints": self.joints,
            "entries": [asdict(e) for e in self.entries],
            "totals": {
                "params": self.total_params,
                "flops": self.total_flops,
                "buffers": self.total_buffers,
            },
        }
        if self.latency_ms is not None:
            payload["latency_ms"] = self.latency_ms
        payload.update(self.extra)
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_table(self) -> str:
        total_params, total_flops = self.total_params, self.total_flops
        width = max([len("layer")] + [len(e.name) for e in self.entries])
        lines = [
            f"# {self.convention}",
            f"# frames={self.frames} joints={self.joints}",
            f"{'layer':<{width}}  {'params':>12}  {'flops':>16}  {'%params':>8}  {'%flops':>8}",
        ]
        for e in self.entries:
            p_share = 100.0 * e.params / total_params if total_params else 0.0
            f_share = 100.0 * e.flops / total_flops if total_flops else 0.0
            lines.append(f"{e.name:<{width}}  {e.params:>12d}  {e.flops:>16d}  {p_share:>7.2f}%  {f_share:>7.2f}%")
        lines.append(f"{'total':<{width}}  {total_params:>12d}  {total_flops:>16d}  {100.0:>7.2f}%  {100.0:>7.2f}%")
        lines.append(f"# BN running statistics (not learnable): {self.total_buffers}")
        if self.latency_ms is not None:
            lines.append(f"# mean eval forward latency: {self.latency_ms:.3f} ms")
        return "\n".join(lines)


def _mlp_params(width: int, hidden: int, joints: int) -> int:
    return hidden * width + hidden + joints * hidden + joints


def _block_entries(prefix: str, bc: BlockConfig, t: int, v: int) -> List[CostEntry]:
    cin, d, h = bc.in_channels, bc.out_channels, bc.mlp_hidden
    kt, kv = bc.kernel
    half = d // 2
    width = input_width(bc.variant, v)
    variant = PoolingVariant(bc.variant)
    tv = t * v

    if variant is PoolingVariant.COMBINED:
        pool_flops = 2 * (2 * half * tv + 16 * v)
    elif variant is PoolingVariant.GLOBAL_ONLY:
        pool_flops = 2 * half * tv
    else:
        pool_flops = 2 * (half * tv + 16 * v)
    mlp_flops = 2 * (h * width + v * h) + h

    entries = [
        CostEntry(f"{prefix}.conv", cin * kt * kv + cin * d + d, 2 * tv * (cin * kt * kv + cin * d)),
        CostEntry(f"{prefix}.attn.pool", 0, pool_flops),
        CostEntry(f"{prefix}.attn.mlp_q", _mlp_params(width, h, v), mlp_flops),
        CostEntry(f"{prefix}.attn.mlp_k", _mlp_params(width, h, v), mlp_flops),
        CostEntry(f"{prefix}.attn.outer_softmax", 0, 2 * v * v),
        CostEntry(f"{prefix}.topology", 1 + v * v, 3 * v * v),
        CostEntry(f"{prefix}.apply", 0, 2 * d * t * v * v),
        CostEntry(f"{prefix}.refine", bc.eca_kernel, d * tv + 2 * bc.eca_kernel * d + d + 2 * d * tv),
        CostEntry(f"{prefix}.bn", 2 * d, 2 * d * tv, buffers=2 * d),
    ]
    if bc.has_residual_proj:
        entries.append(CostEntry(f"{prefix}.residual", cin * d + d, 2 * tv * cin * d))
    entries.append(CostEntry(f"{prefix}.out", 0, 2 * d * tv))
    return entries


def _entries(config: ModelConfig, frames: int, joints: int) -> List[CostEntry]:
    e, c, k = config.embed_dim, config.in_channels, config.num_classes
    tv = frames * joints
    embed_flops = 2 * tv * c * e + (e * tv if config.joint_embedding else 0)
    entries = [CostEntry("embed", c * e + e + (e * joints if config.joint_embedding else 0), embed_flops)]
    cin = e
    for i, cout in enumerate(config.channel_schedule):
        bc = BlockConfig(
            in_channels=cin,
            out_channels=cout,
            num_joints=joints,
            kernel=config.kernel,
            mlp_hidden=config.mlp_hidden,
            dropout=config.dropout,
            eca_kernel=config.eca_kernel,
            variant=config.variant,
            alpha_init=config.alpha_init,
        )
        entries.extend(_block_entries(f"blocks.{i}", bc, frames, joints))
        cin = cout
    entries.append(CostEntry("gap", 0, config.out_channels * tv))
    entries.append(CostEntry("head", config.out_channels * k + k, 2 * config.out_channels * k))
    return entries


def count_params(config: ModelConfig) -> CostReport:
    """Per-layer learnable parameter counts (FLOP columns are zero)."""
    entries = [
        CostEntry(e.name, e.params, 0, e.buffers)
        for e in _entries(config, 1, config.num_joints)
    ]
    return CostReport(entries, config.to_dict(), joints=config.num_joints)


def count_flops(config: ModelConfig, frames: int, joints: Optional[int] = None) -> CostReport:
    """Per-layer parameters and single-sample FLOPs at ``frames`` x ``joints``.

    ``joints`` defaults to the configured graph; another value evaluates the
    closed forms at that joint count.
    """
    joints = config.num_joints if joints is None else joints
    if frames < 1 or joints < 1:
        raise ConfigError(f"frames and joints must be positive, got T={frames}, V={joints}")
    return CostReport(_entries(config, frames, joints), config.to_dict(), frames=frames, joints=joints)


def brute_force_param_enumeration(params: ModelParams) -> int:
    """Sum of element counts over every instantiated learnable tensor."""
    return sum(int(np.prod(tensor.shape, dtype=np.int64)) for _, tensor in params.named_parameters())


def measure_latency(config: ModelConfig, frames: int, repeats: int, seed: int = 0) -> float:
    """Mean eval-mode forward wall time in milliseconds at batch size 1."""
    model = UniSTFormer(config, seed=seed).eval()
    x = Tensor(np.random.default_rng(seed).normal(size=(1, config.in_channels, frames, config.num_joints)))
    model(x)
    started = time.perf_counter()
    for _ in range(repeats):
        model(x)
    return 1000.0 * (time.perf_counter() - started) / repeats


def profile(config: ModelConfig, frames: int, time_repeats: int = 0, seed: int = 0) -> CostReport:
    report = count_flops(config, frames)
    if time_repeats > 0:
        report.latency_ms = measure_latency(config, frames, time_repeats, seed)
    logger.info("profile: %d params, %d FLOPs at T=%d", report.total_params, report.total_flops, frames)
    return report


def ablation_grid(base: ModelConfig, frames: int = 64) -> List[dict]:
    """Hidden-width sweep (combined pooling) followed by the three pooling variants at ``base.mlp_hidden``."""
    rows = []
    for hidden in HIDDEN_GRID:
        rows.append(_ablation_row(f"hidden={hidden}", base.replace(mlp_hidden=hidden, variant=PoolingVariant.COMBINED), frames))
    for variant in PoolingVariant:
        rows.append(_ablation_row(f"variant={variant.value}", base.replace(variant=variant), frames))
    return rows


def _ablation_row(name: str, config: ModelConfig, frames: int) -> dict:
    report = count_flops(config, frames)
    return {
        "name": name,
        "mlp_hidden": config.mlp_hidden,
        "variant": config.variant.value,
        "params": report.total_params,
        "flops": report.total_flops,
        "config": config,
    }
