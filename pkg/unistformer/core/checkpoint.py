"""Binary checkpoints: magic, version, embedded model config, then tensors in declaration order."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from ..utils.handlers import FileHelper
from .codec import ByteReader, pack_tensor, pack_u32
from .exceptions import CheckpointError, ConfigError, ConfigMismatchError, DataFormatError
from .model import ModelConfig, ModelParams, init_params

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"USTF"
CHECKPOINT_VERSION = 1


def encode_checkpoint(params: ModelParams) -> bytes:
    config_blob = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, pack_u32(CHECKPOINT_VERSION, len(config_blob)), config_blob]
    for name, tensor in params.named_parameters():
        if not np.all(np.isfinite(tensor.data)):
            raise CheckpointError(f"refusing to save non-finite parameter {name}")
        chunks.append(pack_tensor(tensor.data))
    for _, buffer in params.named_buffers():
        chunks.append(pack_tensor(buffer))
    return b"".join(chunks)


def save_params(path: Union[str, Path], params: ModelParams) -> Path:
    written = FileHelper.write_atomic(path, encode_checkpoint(params))
    logger.info("Saved checkpoint %s", written)
    return written


def decode_checkpoint(
    payload: bytes,
    expected: Optional[ModelConfig] = None,
    source: str = "<buffer>",
) -> Tuple[ModelConfig, ModelParams]:
    """Rebuild parameters (float32) from a checkpoint, validating every shape against its config."""
    if payload[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (magic {payload[:4]!r})")
    reader = ByteReader(payload, source)
    try:
        reader.take(4)
        version, config_len = reader.u32(2)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
        try:
            config = ModelConfig.from_dict(json.loads(reader.take(config_len).decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as exc:
            raise CheckpointError(f"{source}: unreadable config block: {exc}") from exc

        if expected is not None and expected.to_dict() != config.to_dict():
            raise ConfigMismatchError(f"{source}: checkpoint config does not match the requested model config")

        params = init_params(config, None, np.float32)
        for name, tensor in params.named_parameters():
            stored = reader.tensor()
            if stored.shape != tensor.shape:
                raise CheckpointError(f"{source}: {name} has shape {stored.shape}, config implies {tensor.shape}")
            tensor.data[...] = stored
        for name, buffer in params.named_buffers():
            stored = reader.tensor()
            if stored.shape != buffer.shape:
                raise CheckpointError(f"{source}: {name} has shape {stored.shape}, config implies {buffer.shape}")
            buffer[...] = stored
        if reader.remaining:
            raise CheckpointError(f"{source}: {reader.remaining} trailing bytes")
    except (CheckpointError, ConfigMismatchError):
        raise
    except DataFormatError as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return config, params


def load_params(path: Union[str, Path], expected: Optional[ModelConfig] = None) -> Tuple[ModelConfig, ModelParams]:
    path = Path(path)
    config, params = decode_checkpoint(path.read_bytes(), expected, str(path))
    logger.info("Loaded checkpoint %s (%d blocks)", path, config.num_blocks)
    return config, params
