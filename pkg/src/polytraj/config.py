"""Run configuration: JSON file plus ``--set section.key=value`` overrides.

Precedence is command line over file over defaults. The resolved config is
hashed so every report can say exactly what produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, fields
from typing import Iterable, Optional

from .net import ArchConfig, TrainConfig
from .sim import SimConfig

SECTIONS = {"arch": ArchConfig, "train": TrainConfig, "sim": SimConfig}
# free-form sections: their keys are not checked against a dataclass
DATA_DEFAULTS = {"stride": 10, "horizon": 40, "jitter": 0.0, "jitter_seed": 0}
EVAL_DEFAULTS = {"top_k": [1, 5, 10], "miss_radius": 2.0}


class ConfigError(ValueError):
    pass


def defaults() -> dict:
    cfg = {name: asdict(cls()) for name, cls in SECTIONS.items()}
    cfg["data"] = dict(DATA_DEFAULTS)
    cfg["eval"] = dict(EVAL_DEFAULTS)
    return cfg


def _merge(cfg: dict, section: str, key: str, value) -> None:
    if section not in cfg:
        raise ConfigError(f"unknown config section {section!r}")
    if key not in cfg[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    cfg[section][key] = value


def parse_override(text: str) -> tuple:
    """``section.key=value``; the value is read as JSON, falling back to a plain string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    if path.count(".") != 1:
        raise ConfigError(f"override key {path!r} must be section.key")
    section, key = path.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def load(path: Optional[str] = None, overrides: Iterable[str] = ()) -> dict:
    cfg = defaults()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        for section, body in user.items():
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in body.items():
                _merge(cfg, section, key, value)
    for text in overrides:
        _merge(cfg, *parse_override(text))
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    for name in SECTIONS:
        try:
            build(cfg, name)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} config: {exc}") from exc
    d = cfg["data"]
    if not (isinstance(d["stride"], int) and d["stride"] >= 1):
        raise ConfigError("data.stride must be a positive integer")
    if not (isinstance(d["horizon"], int) and d["horizon"] >= 1):
        raise ConfigError("data.horizon must be a positive integer")
    if d["jitter"] < 0:
        raise ConfigError("data.jitter must be non-negative")
    ks = cfg["eval"]["top_k"]
    if not ks or any(not isinstance(k, int) or k < 1 for k in ks):
        raise ConfigError("eval.top_k must be a non-empty list of positive integers")


def build(cfg: dict, section: str):
    """Instantiate the dataclass for a checked section."""
    cls = SECTIONS[section]
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in cfg[section].items() if k in names})


def with_values(cfg: dict, section: str, **values) -> dict:
    out = json.loads(json.dumps(cfg))
    out[section].update(values)
    validate(out)
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


__all__ = ["ConfigError", "build", "config_hash", "defaults", "load", "parse_override", "with_values"]
