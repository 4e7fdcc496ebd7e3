"""Run configuration: nested dataclasses, YAML/JSON loading and dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .actions import ActionKind, ActionSpaceSpec
from .qlearning import TrainConfig
from .reward import RewardConfig, RewardKind
from .sim import SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    # empty: simulate a cohort with the ``sim`` section
    csv: str = ""


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 42


@dataclass(frozen=True)
class EvalConfig:
    bootstrap: int = 1000
    clip_lo: float = 1e-3
    clip_hi: float = 1e3
    product_clip_lo: float = 1e-6
    product_clip_hi: float = 1e6
    p_floor: float = 1e-3
    l2: float = 1e-3
    split: str = "test"
    model_name: str = ""
    baseline: str = "Dual Mixed"
    hist_bins: int = 40
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    action_space: ActionSpaceSpec = field(default_factory=ActionSpaceSpec)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            split=dataclasses.replace(self.split, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            sim=dataclasses.replace(self.sim, seed=seed),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (ActionKind, RewardKind)):
        return x.value
    return x


def _section_classes() -> dict:
    return {
        "data": DataConfig, "split": SplitConfig, "action_space": ActionSpaceSpec, "reward": RewardConfig,
        "train": TrainConfig, "eval": EvalConfig, "sim": SimConfig,
    }


def valid_keys() -> list[str]:
    return sorted(f"{sec}.{f.name}" for sec, cls in _section_classes().items() for f in fields(cls))


def _coerce(cls, name: str, value: Any, current: Any) -> Any:
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{cls.__name__}.{name} expects a list")
        return tuple(value)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} expects true/false, got {value!r}")
        return value
    if isinstance(value, str) and isinstance(current, (int, float)):
        # YAML 1.1 reads "1e-3" as a string
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"{name} expects a number, got {value!r}") from None
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{name} expects an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} expects a number, got {value!r}")
        return float(value)
    if name == "kind" and cls is ActionSpaceSpec:
        return ActionKind.parse(value)
    if name == "kind" and cls is RewardConfig:
        return RewardKind(value)
    if current is None or value is None:
        return value
    return str(value)


def _build_section(cls, base, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"section for {cls.__name__} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}; valid keys: {', '.join(valid_keys())}")
    changes = {k: _coerce(cls, k, v, getattr(base, k)) for k, v in values.items()}
    try:
        return dataclasses.replace(base, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def from_dict(payload: Optional[dict], base: Optional[RunConfig] = None) -> RunConfig:
    cfg = RunConfig() if base is None else base
    payload = payload or {}
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(payload) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; valid keys: {', '.join(valid_keys())}")
    changes = {sec: _build_section(_section_classes()[sec], getattr(cfg, sec), vals) for sec, vals in payload.items()}
    return dataclasses.replace(cfg, **changes)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        payload = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return from_dict(payload)


def parse_override(text: str) -> tuple[str, str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in valid_keys():
        raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(valid_keys())}")
    section, name = key.split(".", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key}: {exc}") from exc
    return section, name, value


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    for text in overrides or ():
        section, name, value = parse_override(text)
        cfg = from_dict({section: {name: value}}, cfg)
    return cfg
