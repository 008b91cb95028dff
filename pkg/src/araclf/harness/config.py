"""Run configuration: YAML/JSON files mapped onto dataclasses.

A config file is a mapping with these top-level keys (all optional)::

    seed: 0                     # overridden by $ARACLF_SEED when set
    dataset:
      source: synthetic         # synthetic | csv | idx | mnist-dir
      path: data.csv            # csv
      classes: [m1, m2, m3, benign]
      l: 3
      images: x.idx.gz          # idx
      labels: y.idx.gz
      root: data/mnist          # mnist-dir
      split: train
      synthetic: {d: 20, n: 4000, k: 4, l: 3, seed: 7}
    attacker:                   # see AttackerConfig
      radius: 1
      utility: 0.7              # scalar or one value per bad class
      m_samples: 40             # null = exact expectation
      variance_fraction: 0.1
      worst_case: true
      mask: null                # list of modifiable feature indices
    defender:                   # see TabularConfig
      l1_strength: 0.3          # null = cross-validate over l1_grid
      tol: 1
      n_samples: 5
      summary_count: 12
      defences: [raw, uniform, inverse-distance, abacra]
    protocol: {split: 0.8, repetitions: 10}
    training: {...}             # TrainingConfig fields, with nested
                                # "weights" and "attack" mappings
    curve: {eps: [0, 0.1, 0.2, 0.3], attacks: [fgsm, pgd], pgd_steps: 20}

Unknown keys are rejected so that typos surface as config errors.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..robust_train import TrainingConfig
from .experiments import AttackerConfig, TabularConfig

SEED_ENV = "ARACLF_SEED"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    path: str | None = None
    classes: tuple | None = None
    l: int = 0
    label_column: str = "label"
    domain: str = "binary"
    images: str | None = None
    labels: str | None = None
    root: str | None = None
    split: str = "train"
    synthetic: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CurveConfig:
    eps: tuple = (0.0, 0.1, 0.2, 0.3)
    attacks: tuple = ("fgsm", "pgd")
    pgd_steps: int = 20

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps)
        if not eps or eps[0] != 0.0 or list(eps) != sorted(eps):
            raise ConfigError("curve eps grid must be ascending and start at 0")
        object.__setattr__(self, "eps", eps)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    tabular: TabularConfig = field(default_factory=TabularConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    curve: CurveConfig = field(default_factory=CurveConfig)


def _build(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_attacker(raw) -> AttackerConfig:
    raw = dict(raw or {})
    util = raw.get("utility")
    if isinstance(util, list):
        raw["utility"] = tuple(float(u) for u in util)
    cfg = _build(AttackerConfig, raw, "attacker")
    us = cfg.utility if isinstance(cfg.utility, tuple) else (cfg.utility,)
    if any(not 0 <= u <= 1 for u in us):
        raise ConfigError("attacker: utilities must lie in [0, 1]")
    if cfg.radius < 0:
        raise ConfigError("attacker: radius must be >= 0")
    if not 0 < cfg.variance_fraction <= 1:
        raise ConfigError("attacker: variance_fraction must lie in (0, 1]")
    return cfg


def parse_config(raw: dict) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - {"seed", "dataset", "attacker", "defender", "protocol", "training", "curve"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    dataset = _build(DatasetConfig, raw.get("dataset"), "dataset")
    attacker = parse_attacker(raw.get("attacker"))
    tab = dict(raw.get("defender") or {})
    tab.update(raw.get("protocol") or {})
    tab["attacker"] = attacker
    tab["seed"] = seed
    tabular = _build(TabularConfig, tab, "defender/protocol")
    if not 0 < tabular.split < 1 or tabular.repetitions < 1:
        raise ConfigError("protocol: need 0 < split < 1 and repetitions >= 1")
    tr = dict(raw.get("training") or {})
    tr.setdefault("seed", seed)
    try:
        training = TrainingConfig.from_dict(tr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"training: {exc}") from None
    curve = _build(CurveConfig, raw.get("curve"), "curve")
    return RunConfig(seed, dataset, tabular, training, curve)


def load_config(path=None, overrides=None, env=None) -> RunConfig:
    """Read a YAML or JSON config file (or none), apply the seed override
    from ``$ARACLF_SEED`` and return a validated :class:`RunConfig`."""
    raw = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        raw = raw or {}
    if overrides:
        raw = {**raw, **overrides}
    cfg = parse_config(raw)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
        cfg = with_seed(cfg, seed)
    return cfg


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed, tabular=replace(cfg.tabular, seed=seed), training=replace(cfg.training, seed=seed))
