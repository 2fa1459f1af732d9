"""Model checkpoints: one archive holding every parameter plus the config.

The file is a numpy .npz (written through an open handle so the name is not
rewritten) with parameters keyed by "component.parameter" paths and the model
config embedded as a JSON string under __meta__. Loading rebuilds the model
from the embedded config and restores parameters strictly: missing, extra or
misshapen keys are errors.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ConfigurationError, IngestionError
from .model import DeepfakeModel, ModelConfig, build_model

META_KEY = "__meta__"
FORMAT_VERSION = 1


def save_arrays(config: ModelConfig, arrays: dict[str, np.ndarray], path: str,
                extra: dict | None = None) -> str:
    meta = {"format": FORMAT_VERSION, "config": config.as_dict(), "extra": extra or {}}
    if META_KEY in arrays:
        raise ConfigurationError(f"parameter path collides with {META_KEY}")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **{META_KEY: np.array(json.dumps(meta, sort_keys=True))}, **arrays)
    return path


def save_checkpoint(model: DeepfakeModel, path: str, extra: dict | None = None) -> str:
    return save_arrays(model.config, model.named_arrays(), path, extra)


def read_meta(path: str) -> dict:
    try:
        with np.load(path, allow_pickle=False) as archive:
            return json.loads(str(archive[META_KEY]))
    except (OSError, KeyError, ValueError) as exc:
        raise IngestionError(f"not a readable checkpoint: {path} ({exc})") from exc


def load_checkpoint(path: str) -> DeepfakeModel:
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive[META_KEY]))
            arrays = {k: archive[k] for k in archive.files if k != META_KEY}
    except (OSError, KeyError, ValueError) as exc:
        raise IngestionError(f"not a readable checkpoint: {path} ({exc})") from exc
    if meta.get("format") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format in {path}: {meta.get('format')}")
    model = build_model(ModelConfig.from_dict(meta["config"]))
    model.load_arrays(arrays)
    return model
