from __future__ import annotations

import json
from configparser import ConfigParser
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .exceptions import ConfigError
from .model import ModelConfig
from .training import TrainConfig

RUN_CONFIG_SECTIONS = ("model", "train")
PACKAGE_CONFIG = Path(__file__).resolve().parents[1] / "config.ini"


class AppConfig:
    """Package defaults from ``config.ini``: version, log settings and CLI defaults."""

    def __init__(self, config_path: str | Path | None = None):
        self.config_path = Path(config_path).resolve() if config_path else PACKAGE_CONFIG
        self._parser = ConfigParser()
        self._parser.read(self.config_path, encoding="utf-8")
        self.version = self.get_param("project", "version", fallback="0.0.0")

    def get_param(self, section: str, option: str, fallback: str | None = None) -> str | None:
        return self._parser.get(section, option, fallback=fallback)

    def get_int(self, section: str, option: str, fallback: int) -> int:
        value = self.get_param(section, option)
        if value is None:
            return fallback
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigError(f"{self.config_path}: [{section}] {option} must be an integer, got {value!r}") from exc


def load_run_config(path: Optional[str | Path]) -> Dict[str, Dict[str, Any]]:
    """Read a JSON run configuration with optional ``model`` and ``train`` objects."""
    if path is None:
        return {section: {} for section in RUN_CONFIG_SECTIONS}
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = sorted(set(payload) - set(RUN_CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown config sections: {', '.join(unknown)}")
    sections = {}
    for section in RUN_CONFIG_SECTIONS:
        value = payload.get(section, {})
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: '{section}' must be an object")
        sections[section] = value
    return sections


def resolve_configs(
    run_config: Dict[str, Dict[str, Any]],
    model_base: ModelConfig,
    model_overrides: Optional[Dict[str, Any]] = None,
    train_overrides: Optional[Dict[str, Any]] = None,
) -> Tuple[ModelConfig, TrainConfig]:
    """File values over ``model_base`` and TrainConfig defaults, then flag overrides (``None`` means unset)."""
    model = ModelConfig.from_dict(run_config.get("model", {}), base=model_base)
    train = TrainConfig.from_dict(run_config.get("train", {}))
    model_changes = {k: v for k, v in (model_overrides or {}).items() if v is not None}
    train_changes = {k: v for k, v in (train_overrides or {}).items() if v is not None}
    if model_changes:
        model = ModelConfig.from_dict(model_changes, base=model)
    if train_changes:
        train = TrainConfig.from_dict(train_changes, base=train)
    return model, train
