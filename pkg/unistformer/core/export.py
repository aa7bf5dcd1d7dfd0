"""Attention-map export for one block of a trained model."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..utils.handlers import FileHelper
from .exceptions import ConfigError, ShapeError
from .model import ModelParams, forward
from .skeleton import SkeletonSequence, apply_modality, fit_frames
from .tensor import Mode, Tensor

logger = logging.getLogger(__name__)


def block_attention(
    params: ModelParams,
    sequence: SkeletonSequence,
    block_index: int,
    pre_fusion: bool = False,
    force_alpha: Optional[float] = None,
    frames: Optional[int] = None,
    modality: str = "joint",
) -> np.ndarray:
    """Eval-mode [V, V] map of ``block_index`` for one sample: fused M, or A when ``pre_fusion``.

    ``force_alpha`` overrides that block's alpha for this call only.
    """
    config = params.config
    if not 0 <= block_index < config.num_blocks:
        raise ConfigError(f"block index {block_index} out of range for {config.num_blocks} blocks")
    sequence.validate(config.graph)
    data = apply_modality(sequence, config.graph, modality).data
    if frames:
        data = fit_frames(data, frames)
    x = Tensor(data[None], dtype=params.lift_weight.dtype)

    alpha = params.blocks[block_index].alpha
    saved = alpha.data.copy()
    if force_alpha is not None:
        alpha.data[...] = force_alpha
    trace: list = []
    try:
        forward(x, params, Mode.EVAL, trace=trace)
    finally:
        alpha.data[...] = saved
    key = "A" if pre_fusion else "M"
    return np.array(trace[block_index][key].data[0])


def format_matrix(matrix: np.ndarray) -> str:
    """One CSV row per matrix row, 9 significant digits."""
    if matrix.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {matrix.shape}")
    return "".join(",".join(format(float(v), ".9g") for v in row) + "\n" for row in matrix)


def write_attention_csv(path: Union[str, Path], matrix: np.ndarray) -> Path:
    written = FileHelper.write_text(path, format_matrix(matrix))
    logger.info("Wrote %dx%d attention map to %s", matrix.shape[0], matrix.shape[1], written)
    return written
