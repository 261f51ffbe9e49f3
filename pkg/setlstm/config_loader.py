"""
SET-LSTM - Configuration Loader
Reads TrainConfig files: flat key=value text, or YAML for *.yaml / *.yml
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .config import Settings, TrainConfig, get_settings
from .errors import ConfigError, DataIOError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Parse flat key=value lines.

    Blank lines and lines starting with '#' are ignored; an empty value means
    "unset". Repeated keys are rejected.
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected key=value",
                details={"line": lineno},
            )
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(
                f"{source}:{lineno}: empty key", details={"line": lineno}
            )
        if key in values:
            raise ConfigError(
                f"{source}:{lineno}: duplicate key '{key}'", field=key
            )
        values[key] = value.strip()
    return values


def load_config_values(path: PathLike) -> Dict[str, Any]:
    """Raw values from a config file, before validation"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(path, str(e)) from e

    if path.suffix.lower() in (".yaml", ".yml"):
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: YAML config must be a flat mapping")
        nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
        if nested:
            raise ConfigError(
                f"{path}: YAML config must be flat", details={"keys": nested}
            )
        return {str(k): v for k, v in data.items()}
    return dict(parse_key_values(text, source=str(path)))


def load_config(path: PathLike) -> TrainConfig:
    return TrainConfig.from_mapping(load_config_values(path))


def resolve_config(
    path: PathLike,
    seed: Optional[int] = None,
    settings: Optional[Settings] = None,
    **overrides: Any,
) -> TrainConfig:
    """
    Load a config file and apply overrides.

    Seed precedence: explicit seed argument (the --seed flag) > SETLSTM_SEED >
    the file's own value. Other overrides are applied when not None.
    """
    values = load_config_values(path)
    settings = settings or get_settings()
    if seed is not None:
        values["seed"] = seed
    elif settings.SETLSTM_SEED is not None:
        logger.info(f"seed taken from SETLSTM_SEED={settings.SETLSTM_SEED}")
        values["seed"] = settings.SETLSTM_SEED
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return TrainConfig.from_mapping(values)


def write_config(config: TrainConfig, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.write_text("\n".join(config.to_lines()) + "\n", encoding="utf-8")
    except OSError as e:
        raise DataIOError(path, str(e)) from e
    return path
