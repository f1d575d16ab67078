"""Runtime settings from environment variables and the YAML inversion config"""

import logging
import os
from pathlib import Path
from typing import Any, Optional

import yaml

DEFAULT_CONFIG_PATH = "config/inversion_config.yaml"
THREADS_ENV_VAR = "ERT_NUM_THREADS"
VERSION = "0.1.0"

_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def load_config(config_path: Optional[str] = None) -> dict[str, Any]:
    """Load the YAML configuration; a missing path falls back to built-in defaults"""
    if config_path is None:
        if not Path(DEFAULT_CONFIG_PATH).exists():
            return {}
        config_path = DEFAULT_CONFIG_PATH
    with open(config_path) as f:
        config = yaml.safe_load(f)
    return config or {}


def section(config: dict[str, Any], name: str) -> dict[str, Any]:
    value = config.get(name) or {}
    if not isinstance(value, dict):
        raise TypeError(f"configuration section '{name}' must be a mapping")
    return value


def configure_logging(output_config: dict[str, Any]) -> None:
    """Configure the root logger from the ``output`` section"""
    level_name = str(output_config.get("level", "INFO")).upper()
    level = getattr(logging, level_name, logging.INFO)
    handlers: list[logging.Handler] = []
    if output_config.get("console_logging", True):
        handlers.append(logging.StreamHandler())
    if output_config.get("file_logging", False):
        handlers.append(logging.FileHandler(output_config.get("log_file", "ert_inversion.log")))
    if not handlers:
        handlers.append(logging.NullHandler())
    logging.basicConfig(level=level, format=_LOG_FORMAT, handlers=handlers, force=True)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logging.getLogger(__name__).warning(
                "ignoring non-integer %s=%r", THREADS_ENV_VAR, raw
            )
    return os.cpu_count() or 1
