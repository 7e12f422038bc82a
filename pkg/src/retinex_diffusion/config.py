"""Flat ``key = value`` configuration files.

Each key names a field of :class:`TrainConfig` or :class:`SamplerConfig`;
``#`` starts a comment. A ``train.`` or ``sampler.`` prefix picks the target
explicitly (needed for ``seed``, which both define); bare keys resolve to
the training config first.
"""
import dataclasses
from pathlib import Path

from .errors import ConfigError
from .sampler import SamplerConfig
from .trainer import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


def _parse(raw, default, key):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def parse_config(text, train=None, sampler=None, source="<config>"):
    train = train or TrainConfig()
    sampler = sampler or SamplerConfig()
    tf, sf = _fields(TrainConfig), _fields(SamplerConfig)
    tv, sv = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        scope, _, name = key.rpartition(".")
        if scope == "train" and name in tf:
            tv[name] = _parse(raw, getattr(train, name), key)
        elif scope == "sampler" and name in sf:
            sv[name] = _parse(raw, getattr(sampler, name), key)
        elif scope:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        elif key in tf:
            tv[key] = _parse(raw, getattr(train, key), key)
        elif key in sf:
            sv[key] = _parse(raw, getattr(sampler, key), key)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    try:
        return dataclasses.replace(train, **tv), dataclasses.replace(sampler, **sv)
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e


def read_config(path=None, train=None, sampler=None):
    """``(TrainConfig, SamplerConfig)`` from a file; defaults when ``path`` is None."""
    if path is None:
        return train or TrainConfig(), sampler or SamplerConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), train, sampler, str(path))


def format_config(train, sampler):
    lines = [f"{k} = {v}" for k, v in dataclasses.asdict(train).items()]
    lines += [f"sampler.{k} = {v}" for k, v in dataclasses.asdict(sampler).items()]
    return "\n".join(lines) + "\n"
