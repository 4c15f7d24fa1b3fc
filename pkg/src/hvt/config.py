"""Run configuration: one flat JSON object covering model, optimizer and loss."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict

from .errors import ConfigError
from .losses import LossConfig
from .model import HvtConfig
from .optim import OptimizerConfig

_SECTIONS = (("model", HvtConfig), ("optimizer", OptimizerConfig), ("loss", LossConfig))


@dataclass
class RunConfig:
    model: HvtConfig = field(default_factory=HvtConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for name, _ in _SECTIONS:
            out.update(dataclasses.asdict(getattr(self, name)))
        out["betas"] = list(out["betas"])
        return out

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name: sec for sec, klass in _SECTIONS for f in dataclasses.fields(klass)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        parts: Dict[str, Dict[str, Any]] = {sec: {} for sec, _ in _SECTIONS}
        for key, value in raw.items():
            parts[known[key]][key] = value
        try:
            return cls(**{sec: klass(**parts[sec]) for sec, klass in _SECTIONS})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
