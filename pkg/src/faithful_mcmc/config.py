"""Declarative experiment configuration.

A config is a JSON object; every key is checked before anything runs and
unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .energy import EnergyModel, model_from_dict
from .errors import ConfigError, ContractViolation
from .samplers import KernelSpec

_KERNEL_KEYS = {f.name for f in fields(KernelSpec)}


def parse_kernel(doc) -> KernelSpec:
    if isinstance(doc, str):
        doc = {"name": doc}
    if not isinstance(doc, dict):
        raise ConfigError(f"kernel spec must be an object or a name, got {doc!r}")
    unknown = set(doc) - _KERNEL_KEYS
    if unknown:
        raise ConfigError(f"unknown kernel keys {sorted(unknown)}; allowed: {sorted(_KERNEL_KEYS)}")
    if "name" not in doc:
        raise ConfigError("kernel spec needs a 'name'")
    try:
        return KernelSpec(**doc)
    except ContractViolation as exc:
        raise ConfigError(f"kernel {doc.get('name')!r}: {exc}") from exc


def _default_tv_kernels():
    return [
        KernelSpec("pncg", alpha=1.0),
        KernelSpec("gwl", alpha=1.0),
        KernelSpec("rwm"),
        KernelSpec("mucola", alpha=1.5, adjusted=False),
    ]


def _default_limit_kernels():
    return [
        KernelSpec("mucola", adjusted=False),
        KernelSpec("pncg", adjusted=False),
        KernelSpec("pncg"),
    ]


@dataclass
class ExperimentConfig:
    model: dict
    kernel: KernelSpec | None = None
    kernels: list[KernelSpec] | None = None
    steps: int = 500_000
    seeds: list[int] = field(default_factory=lambda: [0])
    checkpoints: list[int] | None = None
    alphas: list[float] = field(default_factory=lambda: [0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0])
    epsilons: list[float] = field(default_factory=lambda: [0.25])
    p: float = 2.0
    burn_in_fraction: float = 0.1
    initial: list[int] | None = None
    emit_states: bool = False
    state_cap: int = 10**6
    mixing_cap: int = 10**6
    out: str = "out"
    description: str = ""
    notes: dict = field(default_factory=dict)

    def build_model(self) -> EnergyModel:
        try:
            return model_from_dict(self.model)
        except ContractViolation as exc:
            raise ConfigError(f"model: {exc}") from exc


_CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)}


def _positive_int(name, v):
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    return v


def _alpha(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
        raise ConfigError(f"{name} must be a positive step size (alpha > 0), got {v!r}")
    return float(v)


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(_CONFIG_KEYS)}")
    if "model" not in doc or not isinstance(doc["model"], dict):
        raise ConfigError("config needs a 'model' object")
    kw = dict(doc)
    if kw.get("kernel") is not None:
        kw["kernel"] = parse_kernel(kw["kernel"])
    if kw.get("kernels") is not None:
        kw["kernels"] = [parse_kernel(k) for k in kw["kernels"]]
    cfg = ExperimentConfig(**kw)

    _positive_int("steps", cfg.steps)
    _positive_int("state_cap", cfg.state_cap)
    _positive_int("mixing_cap", cfg.mixing_cap)
    if not cfg.seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in cfg.seeds):
        raise ConfigError(f"seeds must be a non-empty list of non-negative integers, got {cfg.seeds!r}")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds must be distinct")
    cfg.alphas = [_alpha("alphas entry", a) for a in cfg.alphas]
    if isinstance(cfg.p, bool) or not isinstance(cfg.p, (int, float)) or not cfg.p >= 1:
        raise ConfigError(f"p must be a norm exponent >= 1, got {cfg.p!r}")
    for eps in cfg.epsilons:
        if not isinstance(eps, (int, float)) or not 0 < eps < 1:
            raise ConfigError(f"epsilons must lie in (0, 1), got {eps!r}")
    if not 0 <= cfg.burn_in_fraction < 1:
        raise ConfigError("burn_in_fraction must lie in [0, 1)")
    if cfg.checkpoints is not None:
        cps = cfg.checkpoints
        if not cps or any(_positive_int("checkpoint", c) > cfg.steps for c in cps):
            raise ConfigError("checkpoints must be positive integers no larger than steps")
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigError("checkpoints must be strictly increasing")
    cfg.build_model()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def preset_names() -> list[str]:
    root = resources.files("faithful_mcmc") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    root = resources.files("faithful_mcmc") / "presets"
    res = root / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return parse_config(json.loads(res.read_text()))
