"""Flat ``key = value`` experiment files.

Keys are dotted by section (``voting.theta``, ``attack.variant``); blank
lines and ``#`` comments are ignored. Omitted keys keep the library
defaults (N=100, C=10, 100 rounds, E=5, r=0.01, batch 10, B=25, theta=0.1).
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .attacks import AttackSpec
from .baselines import AggregatorChoice
from .model import TrainConfig
from .reputation import ReputationParams
from .simulator import DatasetSpec, ExperimentConfig
from .voting import VotingConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt(conv):
    def parse(text):
        return None if text.lower() in ("", "none", "auto") else conv(text)
    return parse


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


# key -> (section, field, converter); section None = top level
KEYS = {
    "num_parties": (None, "num_parties", int),
    "clients_per_round": (None, "clients_per_round", int),
    "rounds": (None, "rounds", int),
    "seed": (None, "seed", int),
    "dirichlet_iota": (None, "dirichlet_iota", float),
    "trace_votes": (None, "trace_votes", _bool),
    "hidden": (None, "hidden", _ints),
    "activation": (None, "activation", str),
    "train.local_epochs": ("train", "local_epochs", int),
    "train.learning_rate": ("train", "learning_rate", float),
    "train.batch_size": ("train", "batch_size", int),
    "dataset.kind": ("dataset", "kind", str),
    "dataset.num_classes": ("dataset", "num_classes", int),
    "dataset.dim": ("dataset", "dim", int),
    "dataset.samples_per_class": ("dataset", "samples_per_class", int),
    "dataset.spread": ("dataset", "spread", float),
    "dataset.images_path": ("dataset", "images_path", _opt(str)),
    "dataset.labels_path": ("dataset", "labels_path", _opt(str)),
    "dataset.test_fraction": ("dataset", "test_fraction", float),
    "voting.theta": ("voting", "theta", float),
    "voting.budget": ("voting", "initial_budget", float),
    "aggregator": ("aggregator", "variant", str),
    "aggregator.variant": ("aggregator", "variant", str),
    "aggregator.f": ("aggregator", "f", _opt(int)),
    "aggregator.m_select": ("aggregator", "m_select", _opt(int)),
    "aggregator.beta": ("aggregator", "beta", _opt(int)),
    "reputation.kappa": ("reputation", "kappa", float),
    "reputation.eta": ("reputation", "eta", float),
    "reputation.base_rate": ("reputation", "base_rate", float),
    "reputation.prior_weight": ("reputation", "prior_weight", float),
    "reputation.threshold": ("reputation", "threshold", float),
    "reputation.delta": ("reputation", "delta", float),
    "reputation.num_coords": ("reputation", "num_coords", int),
    "reputation.decay": ("reputation", "decay", float),
    "attack": ("attack", "variant", str),
    "attack.variant": ("attack", "variant", str),
    "attack.fraction": ("attack", "fraction", float),
    "attack.gaussian_scale": ("attack", "gaussian_scale", float),
    "attack.scale_factor": ("attack", "scale_factor", _opt(float)),
    "attack.neurotoxin_k": ("attack", "neurotoxin_k", float),
    "attack.poison_fraction": ("attack", "poison_fraction", float),
    "attack.perturbation": ("attack", "perturbation", str),
    "attack.search_iters": ("attack", "search_iters", int),
    "attack.target_label": ("attack", "target_label", int),
}

SECTIONS = {
    "train": TrainConfig,
    "dataset": DatasetSpec,
    "voting": VotingConfig,
    "aggregator": AggregatorChoice,
    "reputation": ReputationParams,
    "attack": AttackSpec,
}


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict = {}  # key -> (value, lineno, raw)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        conv = KEYS[key][2]
        try:
            values[key] = (conv(val), lineno)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: invalid value {val!r} ({exc})") from None

    def where(keys):
        keys = sorted(keys, key=lambda k: values[k][1])
        return ", ".join(f"{source}:{values[k][1]}: {k}" for k in keys)

    base = ExperimentConfig()
    top = {}
    for section, cls in SECTIONS.items():
        mine = [k for k in values if KEYS[k][0] == section]
        if not mine:
            continue
        fields = {KEYS[k][1]: values[k][0] for k in mine}
        try:
            top[section] = dataclasses.replace(getattr(base, section), **fields)
        except ValueError as exc:
            culprit = [k for k in mine if KEYS[k][1] in str(exc)] or mine
            raise ConfigError(f"{where(culprit)}: {exc}") from None
    top_keys = [k for k in values if KEYS[k][0] is None]
    top.update({KEYS[k][1]: values[k][0] for k in top_keys})
    try:
        cfg = dataclasses.replace(base, **top)
    except ValueError as exc:
        culprit = [k for k in top_keys if KEYS[k][1] in str(exc)] or top_keys
        raise ConfigError(f"{where(culprit) or source}: {exc}") from None

    ds = cfg.dataset
    if ds.kind == "idx":
        for key in ("dataset.images_path", "dataset.labels_path"):
            path = getattr(ds, KEYS[key][1])
            loc = f"{source}:{values[key][1]}" if key in values else source
            if not path:
                raise ConfigError(f"{loc}: {key}: missing dataset path")
            if not Path(path).is_file():
                raise ConfigError(f"{loc}: {key}: no such file {path!r}")
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_text(path.read_text(), str(path))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
