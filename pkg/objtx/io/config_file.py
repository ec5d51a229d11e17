"""
Flat key=value configuration files.

Keys mirror the fields of ModelConfig, GenConfig and TrainConfig; a key declared by
several models (D_z, d_label) is routed to all of them. Lists are comma-separated.
"""

import os
from typing import Dict, Iterable, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError

from objtx.core.models.models import GenConfig, ModelConfig, TrainConfig
from objtx.utils.errors import ConfigError

CONFIG_MODELS = (ModelConfig, GenConfig, TrainConfig)


def known_keys() -> Dict[str, Tuple[type, ...]]:
    keys: Dict[str, Tuple[type, ...]] = {}
    for model in CONFIG_MODELS:
        for name in model.model_fields:
            keys[name] = keys.get(name, ()) + (model,)
    return keys


def parse_config_values(
    values: Mapping[str, Optional[str]], source: str = "<config>", optional: Tuple[type, ...] = ()
) -> Tuple[ModelConfig, GenConfig, TrainConfig]:
    """Route every key to the models declaring it; models in `optional` come back None when invalid."""
    keys = known_keys()
    routed: Dict[type, Dict[str, str]] = {model: {} for model in CONFIG_MODELS}
    for key, value in values.items():
        if key not in keys:
            raise ConfigError(f"{source}: unknown config key '{key}'")
        if value is None or value == "":
            raise ConfigError(f"{source}: config key '{key}' has no value")
        for model in keys[key]:
            routed[model][key] = value
    built = []
    for model in CONFIG_MODELS:
        try:
            built.append(model(**routed[model]))
        except ValidationError as e:
            if model in optional:
                built.append(None)
                continue
            raise ConfigError(f"{source}: invalid {model.__name__}: {e}") from e
    return tuple(built)


def load_config_file(path: Optional[str]) -> Tuple[ModelConfig, GenConfig, TrainConfig]:
    """Parse a key=value file into the three config models; None gives the defaults."""
    if path is None:
        return ModelConfig(), GenConfig(), TrainConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    return parse_config_values(dotenv_values(path), path)


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def canonical_config_text(models: Iterable[BaseModel]) -> str:
    """Key-sorted key=value lines of every field; shared keys must agree."""
    merged: Dict[str, str] = {}
    for model in models:
        for key, value in model.model_dump().items():
            if value is None:
                continue
            text = _format(value)
            if merged.get(key, text) != text:
                raise ConfigError(f"config key '{key}' has conflicting values {merged[key]} and {text}")
            merged[key] = text
    return "".join(f"{key}={merged[key]}\n" for key in sorted(merged))


def parse_config_text(
    text: str, source: str = "<checkpoint>", optional: Tuple[type, ...] = ()
) -> Tuple[ModelConfig, GenConfig, TrainConfig]:
    values = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}: malformed config line '{line}'")
        values[key.strip()] = value.strip()
    return parse_config_values(values, source, optional)
