"""Adversarial protection of faces against face-swap training.

The attacks perturb a face so that a critic trained to call it "real" is
maximally unsure once the face has been geometrically transformed, while the
perturbation itself stays inside an L-inf ball around the original and inside
the valid pixel range. Each gradient step differentiates through a freshly
sampled random transform, so the perturbation survives the augmentations a
face-swap trainer applies to its data.

All single-face attacks share one ascent loop; FGSM is the one-iteration
special case of PGD and produces bit-identical output to PGD configured with
iterations=1 and the same generator state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import ConfigurationError, InputError, NumericError
from .model import DeepfakeModel, bce, discriminate
from .transforms import TransformRanges, apply_transform, sample_params
from .utils import as_face, seed_sequence

METHODS = ("fgsm", "pgd", "mi_fgsm", "random")


@dataclass(frozen=True)
class AttackConfig:
    """Parameters of a protection attack.

    alpha defaults to epsilon / 16 when unset. transform_ranges defaults to
    the working resolution's conventional ranges at attack time.
    """

    epsilon: float = 0.1
    alpha: float | None = None
    iterations: int = 40
    method: str = "pgd"
    momentum_decay: float = 1.0
    transform_ranges: TransformRanges | None = None
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or not (0 < self.epsilon <= 0.2):
            raise ConfigurationError(f"epsilon must be in (0, 0.2], got {self.epsilon}")
        if self.alpha is not None:
            if not np.isfinite(self.alpha) or not (0 < self.alpha <= self.epsilon):
                raise ConfigurationError(
                    f"alpha must be in (0, epsilon], got {self.alpha} with epsilon {self.epsilon}")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise ConfigurationError(f"iterations must be an integer >= 1, got {self.iterations}")
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "fgsm" and self.iterations != 1:
            raise ConfigurationError("fgsm uses exactly one iteration")
        if not np.isfinite(self.momentum_decay) or self.momentum_decay < 0:
            raise ConfigurationError(f"momentum_decay must be >= 0, got {self.momentum_decay}")

    @property
    def resolved_alpha(self) -> float:
        return self.alpha if self.alpha is not None else self.epsilon / 16.0

    def ranges_for(self, resolution: int) -> TransformRanges:
        return self.transform_ranges or TransformRanges.for_resolution(resolution)

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "alpha": self.alpha, "iterations": self.iterations,
                "method": self.method, "momentum_decay": self.momentum_decay,
                "transform_ranges": self.transform_ranges.as_dict() if self.transform_ranges else None,
                "seed": self.seed}


def project_linf(candidate: torch.Tensor, origin: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Project onto the L-inf ball around origin, then into [0, 1].

    Identity whenever candidate already satisfies both constraints.
    """
    if candidate.shape != origin.shape:
        raise InputError(f"shape mismatch: {tuple(candidate.shape)} vs {tuple(origin.shape)}")
    if not np.isfinite(epsilon) or epsilon < 0:
        raise InputError(f"epsilon must be finite and >= 0, got {epsilon}")
    delta = torch.clamp(candidate - origin, -epsilon, epsilon)
    return torch.clamp(origin + delta, 0.0, 1.0)


def real_label_loss(model: DeepfakeModel, domain: str = "A"):
    """Closure computing the critic's BCE against the all-real labeling.

    This is the quantity the attacks ascend: high values mean the critic no
    longer believes the (transformed) face is real.
    """

    def loss(face: torch.Tensor) -> torch.Tensor:
        return bce(discriminate(model, face, domain), 1.0)

    return loss


def _ascend(face: torch.Tensor, disc_loss, cfg: AttackConfig, rng: np.random.Generator,
            momentum: bool) -> tuple[torch.Tensor, list[float]]:
    """Shared sign-ascent loop. Returns the protected face and its loss trace.

    trace[j] is the loss observed at iteration j (before that iteration's
    step) under that iteration's sampled transform; the final entry is the
    finished face's loss without any transform.
    """
    face = as_face(face)
    ranges = cfg.ranges_for(face.shape[0])
    alpha = cfg.resolved_alpha
    origin = face.detach().clone()
    adv = origin.clone()
    grad_accum = torch.zeros_like(origin)
    trace: list[float] = []
    for it in range(cfg.iterations):
        params = sample_params(ranges, rng)
        leaf = adv.detach().clone().requires_grad_(True)
        loss = disc_loss(apply_transform(leaf, params))
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite attack loss at iteration {it}")
        (grad,) = torch.autograd.grad(loss, leaf)
        if not torch.isfinite(grad).all():
            raise NumericError(f"non-finite attack gradient at iteration {it}")
        trace.append(float(loss.detach()))
        if momentum:
            l1 = float(grad.abs().sum())
            if l1 > 0:
                grad_accum = cfg.momentum_decay * grad_accum + grad / l1
            else:
                grad_accum = cfg.momentum_decay * grad_accum
            direction = torch.sign(grad_accum)
        else:
            direction = torch.sign(grad)
        adv = project_linf(adv.detach() + alpha * direction, origin, cfg.epsilon)
    with torch.no_grad():
        trace.append(float(disc_loss(adv)))
    return adv.detach(), trace


def pgd_protect(face, disc_loss, cfg: AttackConfig, rng: np.random.Generator) -> torch.Tensor:
    """Iterated sign ascent through fresh random transforms."""
    protected, _ = pgd_protect_with_trace(face, disc_loss, cfg, rng)
    return protected


def pgd_protect_with_trace(face, disc_loss, cfg: AttackConfig,
                           rng: np.random.Generator) -> tuple[torch.Tensor, list[float]]:
    return _ascend(face, disc_loss, cfg, rng, momentum=False)


def fgsm_protect(face, disc_loss, cfg: AttackConfig, rng: np.random.Generator) -> torch.Tensor:
    """Single-step variant: one transform, one sign step of size alpha."""
    one_step = replace(cfg, method="fgsm", iterations=1)
    protected, _ = _ascend(face, disc_loss, one_step, rng, momentum=False)
    return protected


def mi_fgsm_protect(face, disc_loss, cfg: AttackConfig, rng: np.random.Generator) -> torch.Tensor:
    """Momentum variant: steps follow an L1-normalized running gradient."""
    protected, _ = _ascend(face, disc_loss, cfg, rng, momentum=True)
    return protected


def random_protect(face, cfg: AttackConfig, rng: np.random.Generator) -> torch.Tensor:
    """Model-free baseline: random sign steps under the same projection."""
    face = as_face(face)
    origin = face.detach().clone()
    adv = origin.clone()
    alpha = cfg.resolved_alpha
    for _ in range(cfg.iterations):
        signs = rng.integers(0, 2, size=tuple(origin.shape)).astype(np.float32) * 2.0 - 1.0
        step = torch.from_numpy(signs).to(origin.dtype)
        adv = project_linf(adv + alpha * step, origin, cfg.epsilon)
    return adv


@dataclass
class EnsembleMember:
    model: DeepfakeModel
    tag: str = ""


@dataclass
class EnsembleSpec:
    """K critics, each pre-trained against a different source identity."""

    members: list[EnsembleMember] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("ensemble needs at least one member")

    def split_sizes(self, n_faces: int) -> list[int]:
        """Contiguous near-equal split sizes; remainders go to the first splits."""
        k = len(self.members)
        base, rem = divmod(n_faces, k)
        return [base + (1 if j < rem else 0) for j in range(k)]

    def assignment(self, n_faces: int) -> list[int]:
        out = []
        for member_idx, size in enumerate(self.split_sizes(n_faces)):
            out.extend([member_idx] * size)
        return out


def ensemble_protect(spec: EnsembleSpec, faces, cfg: AttackConfig,
                     rng: np.random.Generator) -> tuple[torch.Tensor, list[dict]]:
    """Protect a face list by partitioning it across the ensemble's critics.

    Face i draws its randomness from the i-th child stream of rng regardless
    of which member it lands on, so the per-face noise does not depend on the
    partition. With a single member this reduces to per-face pgd_protect.
    Returns the protected faces and one record per face (member index, tag,
    final loss).
    """
    faces = [as_face(f, f"faces[{i}]") for i, f in enumerate(faces)]
    if not faces:
        raise InputError("ensemble_protect needs at least one face")
    owners = spec.assignment(len(faces))
    children = [np.random.default_rng(s) for s in rng.spawn(len(faces))]
    protected = []
    records = []
    for i, face in enumerate(faces):
        member = spec.members[owners[i]]
        loss_fn = real_label_loss(member.model, "A")
        adv, trace = pgd_protect_with_trace(face, loss_fn, cfg, children[i])
        protected.append(adv)
        records.append({"member": owners[i], "tag": member.tag, "final_loss": trace[-1]})
    return torch.stack(protected), records


@dataclass
class ProtectionResult:
    """Protected copy of a dataset plus per-face bookkeeping."""

    faces: torch.Tensor              # full [N, H, W, 3], holdout untouched
    protected_indices: list[int]
    final_losses: dict[int, float | None]
    assignments: dict[int, str | None]
    config: AttackConfig


def protect_dataset(dataset, cfg: AttackConfig, model: DeepfakeModel | None = None,
                    ensemble: EnsembleSpec | None = None) -> ProtectionResult:
    """Protect a dataset's training faces with the configured method.

    Per-face randomness comes from child streams of (cfg.seed, "protect")
    indexed by the face's position in the dataset, so results do not depend
    on how many faces are processed or in what batches.
    """
    faces = dataset.faces.clone()
    train_idx = list(dataset.train_indices)
    seeds = seed_sequence(cfg.seed, "protect").spawn(faces.shape[0])
    children = [np.random.default_rng(s) for s in seeds]
    losses: dict[int, float | None] = {}
    tags: dict[int, str | None] = {}

    if cfg.method == "random":
        for i in train_idx:
            faces[i] = random_protect(faces[i], cfg, children[i])
            losses[i] = None
            tags[i] = None
    elif ensemble is not None:
        owners = ensemble.assignment(len(train_idx))
        for pos, i in enumerate(train_idx):
            member = ensemble.members[owners[pos]]
            adv, trace = pgd_protect_with_trace(
                dataset.faces[i], real_label_loss(member.model, "A"), cfg, children[i])
            faces[i] = adv
            losses[i] = trace[-1]
            tags[i] = member.tag or str(owners[pos])
    else:
        if model is None:
            raise ConfigurationError(f"method {cfg.method!r} requires a pre-trained model")
        single = {"pgd": pgd_protect, "fgsm": fgsm_protect, "mi_fgsm": mi_fgsm_protect}[cfg.method]
        loss_fn = real_label_loss(model, "A")
        for i in train_idx:
            if cfg.method == "pgd":
                adv, trace = pgd_protect_with_trace(dataset.faces[i], loss_fn, cfg, children[i])
                losses[i] = trace[-1]
            else:
                adv = single(dataset.faces[i], loss_fn, cfg, children[i])
                with torch.no_grad():
                    losses[i] = float(loss_fn(adv))
            faces[i] = adv
            tags[i] = None
    return ProtectionResult(faces=faces, protected_indices=train_idx, final_losses=losses,
                            assignments=tags, config=cfg)
