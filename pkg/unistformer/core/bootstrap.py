"""Process start-up: logging handlers and runtime resolution."""

from __future__ import annotations

import logging
import sys

from .runtime import RuntimeConfig, get_runtime_config

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"
PACKAGE_LOGGER = "unistformer"


def _reset_handlers(logger: logging.Logger) -> None:
    for handler in list(logger.handlers):
        if getattr(handler, "_unistformer", False):
            logger.removeHandler(handler)
            handler.close()


def _mark(handler: logging.Handler) -> logging.Handler:
    handler._unistformer = True
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    return handler


def initialize_app_runtime(verbose: bool = False) -> RuntimeConfig:
    """Attach the log-file and stderr handlers to the package logger.

    Safe to call more than once; earlier handlers installed here are replaced.
    A log directory that cannot be created leaves stderr as the only sink.
    """
    runtime = get_runtime_config()
    logger = logging.getLogger(PACKAGE_LOGGER)
    _reset_handlers(logger)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    console = _mark(logging.StreamHandler(sys.stderr))
    console.setLevel(logging.DEBUG if verbose else runtime.log_level)
    logger.addHandler(console)

    try:
        runtime.log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = _mark(logging.FileHandler(runtime.log_path, encoding="utf-8"))
    except OSError as exc:
        logger.warning("File logging disabled (%s); logging to stderr only", exc)
    else:
        file_handler.setLevel(logging.DEBUG if verbose else runtime.log_level)
        logger.addHandler(file_handler)
    return runtime
