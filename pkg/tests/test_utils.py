"""Seed-stream discipline and small helpers."""

import json

import numpy as np
import pytest
import torch

from counterfake.errors import InputError, NumericError
from counterfake.utils import (
    as_face,
    canonical_json,
    derive_seed,
    from_nchw,
    rng_from,
    seed_sequence,
    stable_hash,
    to_nchw,
)


class TestSeedStreams:
    def test_same_keys_same_stream(self):
        a = rng_from(7, "train").standard_normal(4)
        b = rng_from(7, "train").standard_normal(4)
        assert np.array_equal(a, b)

    def test_different_keys_differ(self):
        a = rng_from(7, "train").standard_normal(4)
        b = rng_from(7, "protect").standard_normal(4)
        assert not np.array_equal(a, b)

    def test_key_order_matters(self):
        a = rng_from(7, "a", "b").standard_normal(4)
        b = rng_from(7, "b", "a").standard_normal(4)
        assert not np.array_equal(a, b)

    def test_derive_seed_is_stable_and_63bit(self):
        s1 = derive_seed(3, "pretrain", 0)
        s2 = derive_seed(3, "pretrain", 0)
        assert s1 == s2
        assert 0 <= s1 < 2**63
        assert derive_seed(3, "pretrain", 1) != s1

    def test_spawned_children_are_independent(self):
        kids = seed_sequence(5, "protect").spawn(3)
        draws = [np.random.default_rng(k).standard_normal(4) for k in kids]
        assert not np.array_equal(draws[0], draws[1])
        again = [np.random.default_rng(k).standard_normal(4)
                 for k in seed_sequence(5, "protect").spawn(3)]
        for d, a in zip(draws, again):
            assert np.array_equal(d, a)


class TestCanonicalJson:
    def test_sorted_and_compact(self):
        s = canonical_json({"b": 1, "a": [1, 2]})
        assert s == '{"a":[1,2],"b":1}'

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    def test_stable_hash_is_order_insensitive(self):
        h1 = stable_hash({"a": 1, "b": 2})
        h2 = stable_hash({"b": 2, "a": 1})
        assert h1 == h2 and len(h1) == 16

    def test_stable_hash_changes_with_content(self):
        assert stable_hash({"a": 1}) != stable_hash({"a": 2})


class TestFaceValidation:
    def test_accepts_numpy_and_tensor(self, rng):
        arr = rng.uniform(size=(4, 4, 3)).astype(np.float32)
        out = as_face(arr)
        assert isinstance(out, torch.Tensor)
        assert torch.equal(as_face(out), out)

    def test_rejects_bad_shapes_and_values(self):
        with pytest.raises(InputError):
            as_face(torch.rand(4, 4))
        with pytest.raises(InputError):
            as_face(torch.rand(4, 4, 4))
        with pytest.raises(InputError):
            as_face(torch.rand(4, 4, 3) + 2.0)
        with pytest.raises(InputError):
            as_face(torch.randint(0, 2, (4, 4, 3)))
        with pytest.raises(NumericError):
            as_face(torch.full((4, 4, 3), float("inf")))

    def test_validating_a_graph_tensor_is_silent(self, recwarn):
        leaf = torch.rand(4, 4, 3, requires_grad=True)
        as_face(leaf * 1.0)
        assert not [w for w in recwarn.list if "requires_grad" in str(w.message)]


class TestLayoutHelpers:
    def test_nchw_round_trip(self, rng):
        faces = torch.from_numpy(rng.uniform(size=(2, 5, 6, 3)).astype(np.float32))
        assert torch.equal(from_nchw(to_nchw(faces)), faces)

    def test_single_face_gets_batch_dim(self, rng):
        face = torch.from_numpy(rng.uniform(size=(5, 6, 3)).astype(np.float32))
        batch = to_nchw(face)
        assert batch.shape == (1, 3, 5, 6)
