"""YAML experiment configuration: schema, overrides, and builders.

A config file describes one run end to end: the datasets, the model, the
training budgets, the attack, and evaluation settings. Unknown keys are
rejected so typos fail loudly. Values omitted by the user come from DEFAULTS.
Dotted --set overrides (e.g. train.steps=5) are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
import os

import yaml

from .data import FaceDataset, load_dataset, synth_faces
from .errors import ConfigurationError
from .experiments import ExperimentPlan
from .metrics import default_margin
from .model import LossWeights, ModelConfig
from .protect import AttackConfig
from .transforms import TransformRanges
from .utils import stable_hash

DEFAULTS: dict = {
    "seed": 0,
    "resolution": 64,
    "output": None,
    "variant": "Original",
    "adversarial_percentage": 100,
    "data": {
        "target": {"kind": "synth", "seed": 101, "count": 64, "identity": None, "path": None},
        "source": {"kind": "synth", "seed": 202, "count": 64, "identity": None, "path": None},
        "ensemble_sources": [],
    },
    "model": {
        "channel_scale": 1.0,
        "attention": True,
        "saturating_adv": False,
        "loss_weights": {"adv": 1.0, "recon": 10.0, "edge": 1.0, "cyc": 1.0, "perc": 0.1},
    },
    "train": {
        "steps": 300, "pretrain_steps": 300, "batch_size": 8, "lr": 2.0e-4,
        "log_every": 1, "snapshot_every": 50,
    },
    "attack": {
        "method": "pgd", "epsilon": 0.1, "alpha": None, "iterations": 40,
        "momentum_decay": 1.0,
        "transforms": {"scale": None, "rotation_deg": None, "translation_frac": None,
                       "warp_amplitude_px": None, "warp_grid": None},
    },
    "eval": {
        "checkpoint": None, "margin": None, "top_fraction": 0.02, "masks": None,
        "spectra": True, "spectrum_mode": "luma",
    },
}

_DATASET_KEYS = set(DEFAULTS["data"]["target"])


def _check_keys(user: dict, reference: dict, path: str) -> None:
    for key, value in user.items():
        here = f"{path}.{key}" if path else str(key)
        if key not in reference:
            raise ConfigurationError(f"unknown config key: {here}")
        if isinstance(reference[key], dict) and isinstance(value, dict):
            _check_keys(value, reference[key], here)


def _merge(base: dict, user: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> dict:
    _check_keys(cfg, DEFAULTS, "")
    for i, spec in enumerate(cfg.get("data", {}).get("ensemble_sources", []) or []):
        if not isinstance(spec, dict):
            raise ConfigurationError(f"data.ensemble_sources[{i}] must be a mapping")
        bad = set(spec) - _DATASET_KEYS
        if bad:
            raise ConfigurationError(
                f"unknown keys in data.ensemble_sources[{i}]: {sorted(bad)}")
    return cfg


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path) as fh:
        user = yaml.safe_load(fh) or {}
    if not isinstance(user, dict):
        raise ConfigurationError(f"config root must be a mapping: {path}")
    validate_config(user)
    return _merge(DEFAULTS, user)


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply key=value overrides with dotted paths; values parse as YAML."""
    for item in assignments:
        if "=" not in item:
            raise ConfigurationError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse override value {raw!r}: {exc}") from exc
        node = cfg
        parts = dotted.strip().split(".")
        for j, part in enumerate(parts[:-1]):
            if isinstance(node, list):
                node = node[_list_index(part, dotted)]
            elif isinstance(node, dict):
                if part not in node:
                    raise ConfigurationError(f"unknown config key: {'.'.join(parts[:j + 1])}")
                node = node[part]
            else:
                raise ConfigurationError(f"cannot descend into {'.'.join(parts[:j + 1])}")
        leaf = parts[-1]
        if isinstance(node, list):
            node[_list_index(leaf, dotted)] = value
        elif isinstance(node, dict):
            # ensemble_sources entries are dataset specs checked as a whole
            # by validate_config below, so new leaves are fine there.
            if leaf not in node and "ensemble_sources" not in parts[:-1]:
                raise ConfigurationError(f"unknown config key: {dotted}")
            node[leaf] = value
        else:
            raise ConfigurationError(f"cannot assign to {dotted}")
    validate_config(cfg)
    return cfg


def _list_index(token: str, dotted: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ConfigurationError(f"expected a list index in {dotted!r}, got {token!r}") from None


def config_digest(cfg: dict) -> str:
    return stable_hash(cfg)


def build_dataset(spec: dict, resolution: int, fallback_identity: str) -> FaceDataset:
    kind = spec.get("kind", "synth")
    identity = spec.get("identity") or fallback_identity
    if kind == "synth":
        return synth_faces(int(spec.get("seed", 0)), int(spec.get("count", 64)),
                           resolution, identity=identity)
    if kind == "dir":
        path = spec.get("path")
        if not path:
            raise ConfigurationError("dataset kind 'dir' needs a path")
        return load_dataset(path, resolution, identity=spec.get("identity"))
    raise ConfigurationError(f"unknown dataset kind {kind!r}")


def build_model_config(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(resolution=int(cfg["resolution"]),
                       channel_scale=float(m["channel_scale"]),
                       attention_enabled=bool(m["attention"]),
                       loss_weights=LossWeights(**m["loss_weights"]),
                       seed=int(cfg["seed"]),
                       saturating_adv=bool(m["saturating_adv"]))


def build_transform_ranges(cfg: dict) -> TransformRanges | None:
    t = cfg["attack"]["transforms"]
    overrides = {}
    if t["scale"] is not None:
        overrides["scale"] = tuple(float(v) for v in t["scale"])
    for key in ("rotation_deg", "translation_frac", "warp_amplitude_px"):
        if t[key] is not None:
            overrides[key] = float(t[key])
    if t["warp_grid"] is not None:
        overrides["warp_grid"] = int(t["warp_grid"])
    if not overrides:
        return None  # resolved to the resolution's defaults at attack time
    return TransformRanges.for_resolution(int(cfg["resolution"]), **overrides)


def build_attack_config(cfg: dict) -> AttackConfig:
    a = cfg["attack"]
    return AttackConfig(epsilon=float(a["epsilon"]),
                        alpha=None if a["alpha"] is None else float(a["alpha"]),
                        iterations=int(a["iterations"]),
                        method=str(a["method"]),
                        momentum_decay=float(a["momentum_decay"]),
                        transform_ranges=build_transform_ranges(cfg),
                        seed=int(cfg["seed"]))


def build_plan(cfg: dict) -> ExperimentPlan:
    res = int(cfg["resolution"])
    data = cfg["data"]
    target = build_dataset(data["target"], res, "target")
    source = build_dataset(data["source"], res, "source")
    ensemble = [build_dataset(spec, res, f"helper{k}")
                for k, spec in enumerate(data["ensemble_sources"] or [])]
    t = cfg["train"]
    return ExperimentPlan(target=target, source=source, variant=str(cfg["variant"]),
                          adversarial_percentage=float(cfg["adversarial_percentage"]),
                          ensemble_sources=ensemble,
                          steps=int(t["steps"]), pretrain_steps=int(t["pretrain_steps"]),
                          seed=int(cfg["seed"]), model=build_model_config(cfg),
                          attack=build_attack_config(cfg),
                          batch_size=int(t["batch_size"]), lr=float(t["lr"]),
                          log_every=int(t["log_every"]), snapshot_every=int(t["snapshot_every"]))


def eval_margin(cfg: dict) -> int:
    margin = cfg["eval"]["margin"]
    if margin is None or margin == "auto":
        return default_margin(int(cfg["resolution"]))
    return int(margin)
