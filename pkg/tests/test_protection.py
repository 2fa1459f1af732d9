"""Protection attack correctness.

Oracles here: an exact Markov-chain distribution for the random baseline
(per-pixel clipped sign walks), bit-exact degeneracies between attack
variants, and L-inf budget checks both in memory and through the 16-bit PNG
round trip."""

import dataclasses

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from counterfake.data import synth_faces
from counterfake.errors import ConfigurationError, InputError
from counterfake.experiments import write_protected
from counterfake.images import list_images, read_image
from counterfake.model import ModelConfig, bce, build_model, discriminate
from counterfake.protect import (
    AttackConfig,
    EnsembleMember,
    EnsembleSpec,
    ensemble_protect,
    fgsm_protect,
    mi_fgsm_protect,
    pgd_protect,
    pgd_protect_with_trace,
    project_linf,
    protect_dataset,
    random_protect,
    real_label_loss,
)

from conftest import TINY, random_face


class TestAttackConfig:
    def test_defaults_are_valid(self):
        cfg = AttackConfig()
        assert cfg.method == "pgd" and cfg.iterations == 40
        assert cfg.resolved_alpha == pytest.approx(cfg.epsilon / 16)

    @pytest.mark.parametrize("kwargs", [
        dict(epsilon=0.0),
        dict(epsilon=0.25),
        dict(epsilon=-0.1),
        dict(epsilon=float("nan")),
        dict(alpha=0.2, epsilon=0.1),
        dict(alpha=0.0),
        dict(iterations=0),
        dict(iterations=2.5),
        dict(method="bim"),
        dict(method="fgsm", iterations=2),
        dict(momentum_decay=-1.0),
    ])
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            AttackConfig(**kwargs)

    def test_boundary_epsilon_allowed(self):
        AttackConfig(epsilon=0.2)
        AttackConfig(epsilon=0.2, alpha=0.2)

    @given(eps=st.floats(0.01, 0.2), frac=st.floats(0.05, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_alpha_within_epsilon_accepted(self, eps, frac):
        cfg = AttackConfig(epsilon=eps, alpha=eps * frac)
        assert 0 < cfg.resolved_alpha <= cfg.epsilon

    def test_ranges_default_to_resolution(self):
        cfg = AttackConfig()
        assert cfg.ranges_for(64).warp_amplitude_px == 2.0
        assert cfg.ranges_for(32).warp_amplitude_px == 1.0

    def test_as_dict_round_trip_fields(self):
        cfg = AttackConfig(epsilon=0.05, alpha=0.01, iterations=7, method="mi_fgsm",
                           momentum_decay=0.9, seed=4)
        d = cfg.as_dict()
        assert AttackConfig(**{**d, "transform_ranges": None}) == cfg


class TestProjectLinf:
    @given(seed=st.integers(0, 2**31), eps=st.floats(0.01, 0.2))
    @settings(max_examples=40, deadline=None)
    def test_projection_properties(self, seed, eps):
        g = np.random.default_rng(seed)
        origin = torch.from_numpy(g.uniform(size=(6, 6, 3)).astype(np.float32))
        candidate = torch.from_numpy(g.uniform(-0.5, 1.5, size=(6, 6, 3)).astype(np.float32))
        out = project_linf(candidate, origin, eps)
        assert float((out - origin).abs().max()) <= eps + 1e-7
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_interior_point_unchanged(self, rng):
        origin = random_face(rng, 4, 4, lo=0.3, hi=0.7)
        candidate = origin + 0.01
        assert torch.equal(project_linf(candidate, origin, 0.05), candidate)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            project_linf(torch.zeros(2, 2, 3), torch.zeros(3, 3, 3), 0.1)

    def test_negative_epsilon_rejected(self):
        with pytest.raises(InputError):
            project_linf(torch.zeros(2, 2, 3), torch.zeros(2, 2, 3), -0.1)


@pytest.fixture(scope="module")
def critic_loss():
    model = build_model(ModelConfig(**TINY))
    return real_label_loss(model, "A")


class TestAscentVariants:
    def test_fgsm_equals_single_step_pgd(self, critic_loss, rng):
        face = random_face(rng)
        cfg_pgd = AttackConfig(epsilon=0.1, iterations=1, seed=0)
        cfg_any = AttackConfig(epsilon=0.1, iterations=40, seed=0)
        out_pgd = pgd_protect(face, critic_loss, cfg_pgd, np.random.default_rng(7))
        out_fgsm = fgsm_protect(face, critic_loss, cfg_any, np.random.default_rng(7))
        assert torch.equal(out_pgd, out_fgsm)

    def test_mi_fgsm_with_zero_decay_equals_pgd(self, critic_loss, rng):
        """With momentum decay 0 the running gradient is the L1-normalized
        current gradient, whose sign equals the plain gradient sign."""
        face = random_face(rng)
        cfg = AttackConfig(epsilon=0.1, iterations=5, momentum_decay=0.0, seed=0)
        out_mi = mi_fgsm_protect(face, critic_loss, cfg, np.random.default_rng(3))
        out_pgd = pgd_protect(face, critic_loss, cfg, np.random.default_rng(3))
        assert torch.equal(out_mi, out_pgd)

    def test_mi_fgsm_momentum_changes_steps(self, critic_loss, rng):
        face = random_face(rng)
        cfg = AttackConfig(epsilon=0.1, iterations=10, momentum_decay=1.0, seed=0)
        out_mi = mi_fgsm_protect(face, critic_loss, cfg, np.random.default_rng(3))
        out_pgd = pgd_protect(face, critic_loss, cfg, np.random.default_rng(3))
        assert not torch.equal(out_mi, out_pgd)

    def test_budget_holds_for_every_method(self, critic_loss, rng):
        for eps in (0.05, 0.1):
            # enough iterations that the walk reaches the boundary
            cfg = AttackConfig(epsilon=eps, iterations=33, seed=0)
            face = random_face(rng)
            for attack in (pgd_protect, mi_fgsm_protect):
                out = attack(face, critic_loss, cfg, np.random.default_rng(5))
                assert float((out - face).abs().max()) <= eps + 1e-6
                assert float(out.min()) >= 0 and float(out.max()) <= 1
            out = random_protect(face, cfg, np.random.default_rng(5))
            assert float((out - face).abs().max()) <= eps + 1e-6

    def test_trace_length_and_finiteness(self, critic_loss, rng):
        face = random_face(rng)
        cfg = AttackConfig(epsilon=0.1, iterations=6, seed=0)
        out, trace = pgd_protect_with_trace(face, critic_loss, cfg, np.random.default_rng(1))
        assert len(trace) == 7  # one per iteration plus the final untransformed loss
        assert all(np.isfinite(trace))

    def test_deterministic_under_same_stream(self, critic_loss, rng):
        face = random_face(rng)
        cfg = AttackConfig(epsilon=0.1, iterations=4, seed=0)
        a = pgd_protect(face, critic_loss, cfg, np.random.default_rng(9))
        b = pgd_protect(face, critic_loss, cfg, np.random.default_rng(9))
        assert torch.equal(a, b)

    def test_real_label_loss_matches_bce(self, rng):
        model = build_model(ModelConfig(**TINY))
        face = random_face(rng)
        with torch.no_grad():
            want = float(bce(discriminate(model, face, "A"), 1.0))
            assert float(real_label_loss(model, "A")(face)) == want


def walk_distribution(n_states: int, steps: int) -> np.ndarray:
    """Exact distribution of a +-1 walk on 0..n_states-1 with clipping,
    started at the center. Transition: half step left, half right, clipped."""
    p = np.zeros((n_states, n_states))
    for s in range(n_states):
        p[s, max(s - 1, 0)] += 0.5
        p[s, min(s + 1, n_states - 1)] += 0.5
    dist = np.zeros(n_states)
    dist[n_states // 2] = 1.0
    for _ in range(steps):
        dist = dist @ p
    return dist


class TestRandomBaseline:
    def test_matches_exact_chain_distribution(self):
        """Each pixel performs an independent clipped sign walk on the grid
        {-eps, ..., +eps} in alpha steps; compare the empirical histogram
        with the exact chain distribution."""
        eps, alpha, iterations = 0.1, 0.05, 12
        cfg = AttackConfig(epsilon=eps, alpha=alpha, iterations=iterations, method="random")
        # values well inside [0, 1] so the range clamp never binds
        face = torch.full((32, 32, 3), 0.5)
        deltas = []
        for seed in range(3):
            out = random_protect(face, cfg, np.random.default_rng(seed))
            deltas.append((out - face).numpy().ravel())
        deltas = np.concatenate(deltas)
        states = np.rint(deltas / alpha).astype(int) + 2
        counts = np.bincount(states, minlength=5)
        empirical = counts / counts.sum()
        exact = walk_distribution(5, iterations)
        assert 0.5 * np.abs(empirical - exact).sum() < 0.03

    def test_full_step_walk_concentrates_at_boundary(self):
        """alpha = eps gives a three-state chain with uniform stationary law:
        two thirds of the mass ends on the L-inf sphere."""
        cfg = AttackConfig(epsilon=0.1, alpha=0.1, iterations=30, method="random")
        face = torch.full((32, 32, 3), 0.5)
        out = random_protect(face, cfg, np.random.default_rng(0))
        delta = (out - face).abs().numpy().ravel()
        at_boundary = np.mean(np.isclose(delta, 0.1, atol=1e-6))
        exact = walk_distribution(3, 30)
        assert exact[0] + exact[2] == pytest.approx(2 / 3, abs=0.01)
        assert abs(at_boundary - (exact[0] + exact[2])) < 0.03

    def test_needs_no_model(self, rng):
        face = random_face(rng)
        out = random_protect(face, AttackConfig(method="random", iterations=3),
                             np.random.default_rng(2))
        assert out.shape == face.shape


class TestEnsemble:
    def test_split_sizes_and_assignment(self):
        members = [EnsembleMember(model=None, tag=str(k)) for k in range(3)]
        spec = EnsembleSpec(members=members)
        assert spec.split_sizes(10) == [4, 3, 3]
        assert spec.split_sizes(3) == [1, 1, 1]
        assert spec.split_sizes(2) == [1, 1, 0]
        assert spec.assignment(10) == [0] * 4 + [1] * 3 + [2] * 3

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ConfigurationError):
            EnsembleSpec(members=[])

    def test_single_member_reduces_to_pgd(self, rng):
        model = build_model(ModelConfig(**TINY))
        spec = EnsembleSpec(members=[EnsembleMember(model=model, tag="only")])
        faces = [random_face(rng) for _ in range(3)]
        cfg = AttackConfig(epsilon=0.1, iterations=3, seed=0)
        protected, records = ensemble_protect(spec, faces, cfg, np.random.default_rng(42))

        children = np.random.default_rng(42).spawn(3)
        loss_fn = real_label_loss(model, "A")
        for i, face in enumerate(faces):
            want = pgd_protect(face, loss_fn, cfg, children[i])
            assert torch.equal(protected[i], want)
            assert records[i]["member"] == 0 and records[i]["tag"] == "only"

    def test_member_permutation_with_identical_models(self, rng):
        """Per-face noise comes from per-face streams, so with identical
        member models the protected faces do not depend on member order."""
        model = build_model(ModelConfig(**TINY))
        faces = [random_face(rng) for _ in range(4)]
        cfg = AttackConfig(epsilon=0.1, iterations=2, seed=0)
        spec_ab = EnsembleSpec(members=[EnsembleMember(model, "a"), EnsembleMember(model, "b")])
        spec_ba = EnsembleSpec(members=[EnsembleMember(model, "b"), EnsembleMember(model, "a")])
        out_ab, _ = ensemble_protect(spec_ab, faces, cfg, np.random.default_rng(1))
        out_ba, _ = ensemble_protect(spec_ba, faces, cfg, np.random.default_rng(1))
        assert torch.equal(out_ab, out_ba)

    def test_needs_at_least_one_face(self):
        model = build_model(ModelConfig(**TINY))
        spec = EnsembleSpec(members=[EnsembleMember(model=model)])
        with pytest.raises(InputError):
            ensemble_protect(spec, [], AttackConfig(iterations=1), np.random.default_rng(0))


@pytest.fixture(scope="module")
def dataset():
    return synth_faces(101, 6, 32, identity="alice")


@pytest.fixture(scope="module")
def model():
    return build_model(ModelConfig(**TINY))


class TestProtectDataset:
    def test_touches_exactly_the_training_faces(self, dataset, model):
        cfg = AttackConfig(epsilon=0.1, iterations=2, seed=3)
        result = protect_dataset(dataset, cfg, model=model)
        assert result.protected_indices == list(dataset.train_indices)
        for i in dataset.holdout_indices:
            assert torch.equal(result.faces[i], dataset.faces[i])
        for i in dataset.train_indices:
            assert not torch.equal(result.faces[i], dataset.faces[i])
            assert float((result.faces[i] - dataset.faces[i]).abs().max()) <= 0.1 + 1e-6
            assert np.isfinite(result.final_losses[i])

    def test_deterministic_across_calls(self, dataset, model):
        cfg = AttackConfig(epsilon=0.1, iterations=2, seed=3)
        a = protect_dataset(dataset, cfg, model=model)
        b = protect_dataset(dataset, cfg, model=model)
        assert torch.equal(a.faces, b.faces)

    def test_seed_changes_output(self, dataset, model):
        a = protect_dataset(dataset, AttackConfig(epsilon=0.1, iterations=2, seed=3), model=model)
        b = protect_dataset(dataset, AttackConfig(epsilon=0.1, iterations=2, seed=4), model=model)
        assert not torch.equal(a.faces, b.faces)

    def test_random_method_needs_no_model(self, dataset):
        cfg = AttackConfig(method="random", epsilon=0.1, iterations=3, seed=0)
        result = protect_dataset(dataset, cfg)
        assert result.final_losses[dataset.train_indices[0]] is None

    def test_gradient_method_without_model_rejected(self, dataset):
        with pytest.raises(ConfigurationError):
            protect_dataset(dataset, AttackConfig(method="pgd", iterations=1, seed=0))

    def test_ensemble_path_records_tags(self, dataset, model):
        spec = EnsembleSpec(members=[EnsembleMember(model, "m0"), EnsembleMember(model, "m1")])
        cfg = AttackConfig(epsilon=0.1, iterations=2, seed=3)
        result = protect_dataset(dataset, cfg, ensemble=spec)
        tags = [result.assignments[i] for i in result.protected_indices]
        sizes = spec.split_sizes(len(result.protected_indices))
        assert tags == ["m0"] * sizes[0] + ["m1"] * sizes[1]

    def test_png_round_trip_preserves_budget(self, dataset, model, tmp_path):
        """Files on disk must satisfy the same L-inf budget as the tensors:
        quantization rounds toward the original, never away."""
        cfg = AttackConfig(epsilon=0.05, iterations=33, seed=1)
        result = protect_dataset(dataset, cfg, model=model)
        out = tmp_path / "protected"
        write_protected(result, dataset, str(out))
        names = list_images(str(out))
        assert len(names) == len(dataset.train_indices)
        worst = 0.0
        for name in names:
            arr = read_image(str(out / name))
            i = dataset.names.index(name)
            worst = max(worst, float(np.abs(arr - dataset.faces[i].numpy()).max()))
        assert worst <= 0.05 + 1e-6

    def test_written_faces_match_memory_exactly(self, dataset, model, tmp_path):
        """16-bit PNGs reload to the exact in-memory float values because all
        dataset pixels sit on the 16-bit grid."""
        cfg = AttackConfig(epsilon=0.1, iterations=2, seed=1)
        result = protect_dataset(dataset, cfg, model=model)
        out = tmp_path / "protected"
        write_protected(result, dataset, str(out))
        for name in list_images(str(out)):
            arr = read_image(str(out / name))
            i = dataset.names.index(name)
            stored = result.faces[i].numpy()
            # on-disk value differs from memory only by the round toward the original
            assert np.abs(arr - stored).max() <= 1.0 / 65535.0
