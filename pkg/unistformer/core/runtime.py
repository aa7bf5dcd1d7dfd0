"""Runtime paths and configuration resolution for UniSTFormer."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from platformdirs import PlatformDirs

from .configuration import AppConfig

APP_NAME = "UniSTFormer"
APP_AUTHOR = "UniSTFormer"


@dataclass(frozen=True)
class RuntimeConfig:
    app_name: str
    app_version: str
    user_data_dir: Path
    log_dir: Path
    log_path: Path
    log_level: int
    default_seed: int
    default_frames: int
    default_classes: int
    default_per_class: int


def _resolve_data_path(value: str | None, default_name: str, base_dir: Path) -> Path:
    if value:
        configured = Path(value).expanduser()
        if configured.is_absolute():
            return configured
        return (base_dir / configured).resolve()
    return (base_dir / default_name).resolve()


def _log_level(name: str) -> int:
    level = logging.getLevelName(name.upper())
    return level if isinstance(level, int) else logging.INFO


@lru_cache(maxsize=1)
def get_runtime_config() -> RuntimeConfig:
    """Resolve package defaults and per-user paths; directories are created lazily by bootstrap."""
    app_config = AppConfig()
    dirs = PlatformDirs(APP_NAME, appauthor=APP_AUTHOR)

    user_data_dir = Path(dirs.user_data_dir).resolve()
    log_dir = Path(dirs.user_log_dir).resolve()
    log_path = _resolve_data_path(app_config.get_param("settings", "log_file"), "unistformer.log", log_dir)

    return RuntimeConfig(
        app_name=APP_NAME,
        app_version=app_config.version,
        user_data_dir=user_data_dir,
        log_dir=log_dir,
        log_path=log_path,
        log_level=_log_level(app_config.get_param("settings", "log_level", fallback="INFO")),
        default_seed=app_config.get_int("defaults", "seed", 0),
        default_frames=app_config.get_int("defaults", "frames", 64),
        default_classes=app_config.get_int("defaults", "classes", 4),
        default_per_class=app_config.get_int("defaults", "per_class", 32),
    )
