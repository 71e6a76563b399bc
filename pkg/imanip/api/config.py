"""Run configuration files.

One ``key = value`` per line; ``#`` starts a comment. Keys are RunConfig
field names, for example::

    schedule = B2-3N1
    method = imanip
    replay_k = 2
    seeds = 0,1,2
"""
import logging
import os
from typing import Dict, Mapping, Optional

from pydantic import ValidationError

from ..core.errors import ConfigError
from ..model.schemas import RunConfig

logger = logging.getLogger(__name__)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{number}: expected key = value, got '{raw.strip()}'")
        if key not in RunConfig.model_fields:
            raise ConfigError(f"{source}:{number}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def read_config_file(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), path)


def build_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """File values first, then every non-None override on top."""
    values: Dict[str, object] = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in RunConfig.model_fields:
            raise ConfigError(f"unknown key '{key}'")
        values[key] = value
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        logger.error(f"Invalid run configuration: {str(e)}")
        raise ConfigError(str(e)) from e


def config_to_text(config: RunConfig) -> str:
    lines = []
    for key, value in config.model_dump().items():
        if value is None:
            value = "none"
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
