"""Seed plumbing, canonical serialization and small tensor helpers.

All randomness in the package flows through numpy Generators created here.
A stream is addressed by a root seed plus a tuple of keys (strings or ints);
the same address always yields the same stream, and distinct addresses yield
statistically independent streams via SeedSequence. Nothing ever touches the
global numpy or torch RNG state.
"""

from __future__ import annotations

import hashlib
import json
import zlib

import numpy as np
import torch

from .errors import InputError, NumericError


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InputError(f"rng keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise InputError(f"rng keys must be int or str, got {type(key).__name__}")


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    """SeedSequence for the stream addressed by (seed, *keys)."""
    entropy = [int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.SeedSequence(entropy)


def rng_from(seed: int, *keys) -> np.random.Generator:
    """Independent Generator for the stream addressed by (seed, *keys)."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys) -> int:
    """Collapse (seed, *keys) into a single reproducible 63-bit integer seed."""
    state = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1] & 0x7FFFFFFF) << 32)


def canonical_json(obj) -> str:
    """JSON with sorted keys and fixed separators, suitable for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def stable_hash(obj) -> str:
    """Hex digest of the canonical JSON form of obj."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def as_face(value, name: str = "face") -> torch.Tensor:
    """Validate and return a [H, W, 3] float tensor with values in [0, 1]."""
    if isinstance(value, np.ndarray):
        value = torch.from_numpy(value)
    if not isinstance(value, torch.Tensor):
        raise InputError(f"{name} must be a torch.Tensor or numpy array")
    if value.ndim != 3 or value.shape[2] != 3:
        raise InputError(f"{name} must have shape [H, W, 3], got {tuple(value.shape)}")
    if not value.dtype.is_floating_point:
        raise InputError(f"{name} must be floating point, got {value.dtype}")
    probe = value.detach()
    if not torch.isfinite(probe).all():
        raise NumericError(f"{name} contains non-finite values")
    lo, hi = float(probe.min()), float(probe.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise InputError(f"{name} values must lie in [0, 1], got range [{lo:.4g}, {hi:.4g}]")
    return value


def to_nchw(faces: torch.Tensor) -> torch.Tensor:
    """[H, W, 3] or [B, H, W, 3] channel-last -> NCHW batch."""
    if faces.ndim == 3:
        faces = faces.unsqueeze(0)
    return faces.permute(0, 3, 1, 2).contiguous()


def from_nchw(batch: torch.Tensor) -> torch.Tensor:
    """NCHW batch -> [B, H, W, 3] channel-last."""
    return batch.permute(0, 2, 3, 1).contiguous()


def check_finite(value: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite value in {what}")
    return value
