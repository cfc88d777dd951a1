"""Experiment configuration: dataclass tree, profile defaults, YAML layering."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from .agent import AgentConfig, PretrainConfig
from .discriminator import DiscriminatorConfig, DiscriminatorPretrainConfig
from .domain import PROFILES
from .errors import ConfigError
from .simulator import SimulatorConfig
from .trainer import TrainerConfig


@dataclass
class ExperimentConfig:
    profile: str = "toy"
    seed: int = 0
    corpus_size: int = 500
    n_simulated: int = 2000
    n_test: int = 1000
    positives: int = 500
    negatives: Optional[int] = None
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    agent_pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    discriminator_pretrain: DiscriminatorPretrainConfig = field(
        default_factory=DiscriminatorPretrainConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    @property
    def n_negatives(self) -> int:
        return self.positives if self.negatives is None else self.negatives

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


SECTIONS = {
    "simulator": SimulatorConfig,
    "agent": AgentConfig,
    "agent_pretrain": PretrainConfig,
    "discriminator": DiscriminatorConfig,
    "discriminator_pretrain": DiscriminatorPretrainConfig,
    "trainer": TrainerConfig,
}


def default_config(profile: str = "toy") -> ExperimentConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = ExperimentConfig(profile=profile)
    cfg.agent = AgentConfig.for_profile(profile)
    cfg.discriminator = DiscriminatorConfig.for_profile(profile)
    if profile == "dstc2-scale":
        cfg.simulator = SimulatorConfig(epsilon=0.3, patience=12)
        cfg.corpus_size = 1612
    return cfg


def _merge(base: Dict[str, Any], update: Mapping[str, Any], path: str = "") -> Dict[str, Any]:
    out = dict(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {where!r} expects a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def from_dict(d: Mapping[str, Any]) -> ExperimentConfig:
    """Build a config from a (possibly partial) nested mapping over profile defaults."""
    profile = d.get("profile", "toy")
    merged = _merge(default_config(profile).to_dict(), d)
    try:
        kwargs = {k: v for k, v in merged.items() if k not in SECTIONS}
        for name, cls in SECTIONS.items():
            kwargs[name] = cls(**merged[name])
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def set_dotted(d: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Profile defaults, then the YAML file, then dotted-key ``overrides``."""
    layered: Dict[str, Any] = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping")
        layered = doc
    for key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(layered, key, value)
    return from_dict(layered)
