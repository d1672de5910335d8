"""Flat ``key=value`` configuration files covering TrainConfig and EnvConfig."""

from __future__ import annotations

import enum
import typing
from dataclasses import fields, replace

from .agents import TrainConfig
from .env import EnvConfig
from .errors import ConfigError


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


_TRAIN_TYPES = _field_types(TrainConfig)
_ENV_TYPES = _field_types(EnvConfig)


def _convert(key: str, raw: str, typ, lineno: int):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if isinstance(typ, type) and issubclass(typ, enum.Enum):
            return typ(raw.strip().upper())
    except ValueError:
        pass
    else:
        return raw
    name = typ.__name__ if isinstance(typ, type) else str(typ)
    raise ConfigError(f"line {lineno}: value {raw!r} for key {key!r} is not a valid {name}")


def parse_config_text(text: str, extra_keys: tuple[str, ...] = ()) -> tuple[TrainConfig, EnvConfig, dict]:
    """Parse config text into validated configs.

    Keys listed in ``extra_keys`` are passed through untouched in the returned dict.
    """
    train, env, extra = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in _TRAIN_TYPES:
            train[key] = _convert(key, raw, _TRAIN_TYPES[key], lineno)
        elif key in _ENV_TYPES:
            env[key] = _convert(key, raw, _ENV_TYPES[key], lineno)
        elif key in extra_keys:
            extra[key] = raw
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return replace(TrainConfig(), **train).validate(), replace(EnvConfig(), **env).validate(), extra


def load_config(path) -> tuple[TrainConfig, EnvConfig]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    train, env, _ = parse_config_text(text)
    return train, env
