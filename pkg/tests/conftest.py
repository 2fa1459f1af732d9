"""Shared fixtures. Everything here is deliberately tiny; the expensive
end-to-end runs live in test_acceptance.py behind their own fixtures."""

import numpy as np
import pytest
import torch

from counterfake.data import synth_faces
from counterfake.model import ModelConfig, build_model

TINY = dict(resolution=32, channel_scale=0.125, seed=7)


@pytest.fixture(scope="session")
def tiny_model():
    """One small model shared by read-only tests."""
    return build_model(ModelConfig(**TINY))


@pytest.fixture(scope="session")
def tiny_target():
    return synth_faces(101, 8, 32, identity="alice")


@pytest.fixture(scope="session")
def tiny_source():
    return synth_faces(202, 8, 32, identity="bob")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_face(rng, h=32, w=32, lo=0.0, hi=1.0, dtype=torch.float32):
    """Uniform random face tensor in [lo, hi]."""
    arr = rng.uniform(lo, hi, size=(h, w, 3))
    return torch.from_numpy(arr).to(dtype)
