"""UniSTFormer: unified spatial-temporal attention for skeleton action recognition."""

from .core.model import ModelConfig, UniSTFormer, full_config, tiny_config

__all__ = ["ModelConfig", "UniSTFormer", "full_config", "tiny_config"]
