"""Experiment harness: training loops, protection recipes, evaluation runs.

A run is described by an ExperimentPlan and executed by run_variant, which
performs the full recipe for one named variant: optionally pre-train defender
models, protect the target's training faces, mix protected faces into the
real ones, train the attacker model on the mixture, and persist checkpoints,
loss logs and provenance under one output directory.

Seed discipline: the plan's seed is the only entropy source. Every stage
(defender pre-training, protection, mixing, attacker init, attacker loop)
derives its own integer seed from it by name, so stages can be reproduced in
isolation and adding one stage never shifts another's randomness.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from .checkpoint import save_arrays, save_checkpoint
from .data import FaceDataset, mix_adversarial
from .errors import ConfigurationError, NumericError, TrainingDiverged
from .images import write_png, write_png_toward
from .metrics import MetricReport, default_margin, evaluate_set, fft_magnitude, write_report, write_spectrum_png
from .model import (DeepfakeModel, LossBreakdown, ModelConfig, build_model, create_optimizers,
                    generate, train_step)
from .protect import AttackConfig, EnsembleMember, EnsembleSpec, protect_dataset
from .utils import canonical_json, derive_seed, rng_from

LOG_COLUMNS = ("step", "adv", "recon", "edge", "cyc", "perc", "total_G", "total_D")


@dataclass
class TrainingLog:
    rows: list[tuple[int, LossBreakdown]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        steps = [s for s, _ in self.rows]
        if steps != sorted(set(steps)):
            raise ConfigurationError("log rows must have strictly increasing steps")

    def to_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for step, b in self.rows:
                d = b.as_dict()
                writer.writerow([step] + [f"{d[c]:.10g}" for c in LOG_COLUMNS[1:]])
        return path

    def tail_means(self, fraction: float = 0.1) -> dict[str, float]:
        """Mean of each term over the last fraction of logged rows."""
        if not self.rows:
            return {}
        n = max(1, int(np.ceil(fraction * len(self.rows))))
        tail = [b.as_dict() for _, b in self.rows[-n:]]
        return {c: float(np.mean([t[c] for t in tail])) for c in LOG_COLUMNS[1:]}


def train_model(model: DeepfakeModel, target: FaceDataset, source: FaceDataset, steps: int,
                seed: int, batch_size: int = 8, lr: float = 2e-4, log_every: int = 1,
                snapshot_every: int = 50, snapshot_path: str | None = None) -> TrainingLog:
    """Run the alternating GAN loop for a fixed number of steps.

    Batches are drawn from each dataset's training split. If a step produces
    non-finite values the loop aborts: when a snapshot path is set, the last
    good parameter snapshot is written there and TrainingDiverged carries its
    location.
    """
    for name, ds in (("target", target), ("source", source)):
        if ds.resolution != model.config.resolution:
            raise ConfigurationError(
                f"{name} dataset resolution {ds.resolution} does not match model "
                f"resolution {model.config.resolution}")
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    rng = rng_from(seed, "train-loop")
    state = create_optimizers(model, lr=lr)
    rows: list[tuple[int, LossBreakdown]] = []
    snapshot: tuple[int, dict] | None = None
    idx_a = np.array(target.train_indices)
    idx_b = np.array(source.train_indices)
    for step in range(steps):
        if snapshot_every and step % snapshot_every == 0:
            snapshot = (step, model.named_arrays())
        batch_a = target.faces[_draw(rng, idx_a, batch_size)]
        batch_b = source.faces[_draw(rng, idx_b, batch_size)]
        try:
            breakdown = train_step(model, batch_a, batch_b, state, rng)
        except NumericError as exc:
            if snapshot_path and snapshot is not None:
                good_step, arrays = snapshot
                path = save_arrays(model.config, arrays, snapshot_path,
                                   extra={"last_good_step": good_step})
                raise TrainingDiverged(
                    f"training diverged at step {step}: {exc}", path) from exc
            raise
        if step % log_every == 0 or step == steps - 1:
            rows.append((step, breakdown))
    return TrainingLog(rows=rows, metadata={
        "steps": steps, "batch_size": batch_size, "lr": lr, "seed": seed,
        "log_every": log_every, "target": target.identity, "source": source.identity})


def _draw(rng: np.random.Generator, pool: np.ndarray, size: int) -> np.ndarray:
    return rng.choice(pool, size=size, replace=size > pool.size)


def run_pretrain(target: FaceDataset, source: FaceDataset, base_config: ModelConfig,
                 steps: int, seed: int, batch_size: int = 8, lr: float = 2e-4,
                 log_every: int = 1) -> tuple[DeepfakeModel, TrainingLog]:
    """Build a fresh model and train it on (target, source).

    Model init and the loop derive separate seeds from the given one. With
    steps=0 the initialized model is returned untouched.
    """
    config = replace(base_config, seed=derive_seed(seed, "model"))
    model = build_model(config)
    log = train_model(model, target, source, steps, derive_seed(seed, "loop"),
                      batch_size=batch_size, lr=lr, log_every=log_every)
    return model, log


@dataclass(frozen=True)
class VariantRecipe:
    protect: str | None  # None, "pgd", "random", "ensemble", or "attack" (use plan.attack)
    epsilon: float | None
    lite: bool


VARIANTS: dict[str, VariantRecipe] = {
    "Original": VariantRecipe(None, None, False),
    "PGD-01": VariantRecipe("pgd", 0.1, False),
    "PGD-005": VariantRecipe("pgd", 0.05, False),
    "Ensemble": VariantRecipe("ensemble", 0.1, False),
    "Random": VariantRecipe("random", 0.1, False),
    "Lite": VariantRecipe(None, None, True),
    "Lite-Ens": VariantRecipe("ensemble", 0.1, True),
    "Lite-Random": VariantRecipe("random", 0.1, True),
    "Custom": VariantRecipe("attack", None, False),
}

SETTING_BY_VARIANT = {
    "Original": "white-box", "PGD-01": "white-box", "PGD-005": "white-box",
    "Random": "white-box", "Ensemble": "gray-box",
    "Lite": "black-box", "Lite-Ens": "black-box", "Lite-Random": "black-box",
}


@dataclass
class ExperimentPlan:
    target: FaceDataset
    source: FaceDataset
    variant: str = "Original"
    adversarial_percentage: float = 100.0
    ensemble_sources: list[FaceDataset] = field(default_factory=list)
    steps: int = 300
    pretrain_steps: int = 300
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    batch_size: int = 8
    lr: float = 2e-4
    log_every: int = 1
    snapshot_every: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant {self.variant!r}; known: {sorted(VARIANTS)}")
        if not (0 <= self.adversarial_percentage <= 100):
            raise ConfigurationError(
                f"adversarial_percentage must be in [0, 100], got {self.adversarial_percentage}")
        if self.steps < 0 or self.pretrain_steps < 0:
            raise ConfigurationError("step counts must be >= 0")
        recipe = VARIANTS[self.variant]
        if recipe.protect == "ensemble" and not self.ensemble_sources:
            raise ConfigurationError(f"variant {self.variant} needs ensemble_sources")


@dataclass
class VariantResult:
    variant: str
    model: DeepfakeModel
    log: TrainingLog
    checkpoint_path: str
    protected_dir: str | None
    provenance: dict


def _attack_for(plan: ExperimentPlan, recipe: VariantRecipe, method: str) -> AttackConfig:
    cfg = plan.attack
    overrides: dict = {"seed": derive_seed(plan.seed, "protect")}
    if recipe.protect != "attack":
        overrides["method"] = method
        if method == "fgsm":
            overrides["iterations"] = 1
        elif cfg.method == "fgsm":
            # template was fgsm-constrained; restore the default budget
            overrides["iterations"] = 40
    if recipe.epsilon is not None:
        overrides["epsilon"] = recipe.epsilon
        if cfg.alpha is not None and cfg.alpha > recipe.epsilon:
            overrides["alpha"] = None
    return replace(cfg, **overrides)


def write_protected(result, dataset: FaceDataset, out_dir: str) -> str:
    """Write protected training faces as 16-bit PNGs plus a JSON sidecar.

    Pixels quantize toward the matching original so the L-inf budget holds
    for the files exactly as it did in memory.
    """
    os.makedirs(out_dir, exist_ok=True)
    per_face = []
    for i in result.protected_indices:
        name = os.path.splitext(dataset.names[i])[0] + ".png"
        write_png_toward(os.path.join(out_dir, name), result.faces[i], dataset.faces[i])
        per_face.append({"index": i, "file": name, "final_loss": result.final_losses.get(i),
                         "member": result.assignments.get(i)})
    sidecar = {"attack": result.config.as_dict(), "seed": result.config.seed,
               "faces": per_face}
    with open(os.path.join(out_dir, "attack.json"), "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
    return out_dir


def run_variant(plan: ExperimentPlan, out_dir: str) -> VariantResult:
    """Execute one full variant recipe and persist its artifacts."""
    recipe = VARIANTS[plan.variant]
    os.makedirs(out_dir, exist_ok=True)
    prov_steps: list[dict] = []
    protected_dir = None
    mixed = plan.target
    replaced: list[int] = []

    if recipe.protect is not None:
        method = plan.attack.method if recipe.protect == "attack" else recipe.protect
        if recipe.protect == "random" or (recipe.protect == "attack" and method == "random"):
            cfg = _attack_for(plan, recipe, "random")
            result = protect_dataset(plan.target, cfg)
            prov_steps.append({"op": "protect", "method": "random",
                               "epsilon": cfg.epsilon, "iterations": cfg.iterations})
        elif recipe.protect == "ensemble":
            members = []
            for k, src in enumerate(plan.ensemble_sources):
                defender, _ = run_pretrain(plan.target, src, plan.model, plan.pretrain_steps,
                                           derive_seed(plan.seed, "pretrain", k),
                                           batch_size=plan.batch_size, lr=plan.lr,
                                           log_every=plan.log_every)
                save_checkpoint(defender, os.path.join(out_dir, "checkpoints", f"member_{k}.ckpt"))
                members.append(EnsembleMember(model=defender, tag=src.identity))
                prov_steps.append({"op": "pretrain", "member": k, "source": src.identity,
                                   "steps": plan.pretrain_steps})
            cfg = _attack_for(plan, recipe, "pgd")
            result = protect_dataset(plan.target, cfg, ensemble=EnsembleSpec(members=members))
            prov_steps.append({"op": "protect", "method": "ensemble", "members": len(members),
                               "epsilon": cfg.epsilon, "iterations": cfg.iterations})
        else:  # pgd / fgsm / mi_fgsm against one defender trained on the true pair
            defender, _ = run_pretrain(plan.target, plan.source, plan.model, plan.pretrain_steps,
                                       derive_seed(plan.seed, "pretrain", 0),
                                       batch_size=plan.batch_size, lr=plan.lr,
                                       log_every=plan.log_every)
            save_checkpoint(defender, os.path.join(out_dir, "checkpoints", "defender_0.ckpt"))
            prov_steps.append({"op": "pretrain", "member": 0, "source": plan.source.identity,
                               "steps": plan.pretrain_steps})
            cfg = _attack_for(plan, recipe, method)
            result = protect_dataset(plan.target, cfg, model=defender)
            prov_steps.append({"op": "protect", "method": cfg.method,
                               "epsilon": cfg.epsilon, "iterations": cfg.iterations})
        protected_dir = write_protected(result, plan.target, os.path.join(out_dir, "protected"))
        protected_ds = plan.target.with_faces(result.faces)
        mixed, replaced = mix_adversarial(plan.target, protected_ds, plan.adversarial_percentage,
                                          rng_from(plan.seed, "mix"))
        prov_steps.append({"op": "mix", "percentage": plan.adversarial_percentage,
                           "replaced": len(replaced)})

    attacker_config = replace(
        plan.model,
        channel_scale=plan.model.channel_scale * (0.5 if recipe.lite else 1.0),
        seed=derive_seed(plan.seed, "attacker"))
    attacker = build_model(attacker_config)
    prov_steps.append({"op": "train", "steps": plan.steps, "lite": recipe.lite,
                       "channel_scale": attacker_config.channel_scale,
                       "adversarial_percentage": plan.adversarial_percentage if recipe.protect else 0.0})
    log = train_model(attacker, mixed, plan.source, plan.steps, derive_seed(plan.seed, "train"),
                      batch_size=plan.batch_size, lr=plan.lr, log_every=plan.log_every,
                      snapshot_every=plan.snapshot_every,
                      snapshot_path=os.path.join(out_dir, "checkpoints", "last_good.ckpt"))
    ckpt = save_checkpoint(attacker, os.path.join(out_dir, "checkpoints", "final.ckpt"),
                           extra={"variant": plan.variant, "seed": plan.seed})
    export_logs(log, os.path.join(out_dir, "logs"))
    provenance = {
        "variant": plan.variant,
        "setting": SETTING_BY_VARIANT.get(plan.variant, "custom"),
        "seed": plan.seed,
        "recipe": prov_steps,
        "replaced_indices": replaced,
        "model": attacker_config.as_dict(),
        "attack": plan.attack.as_dict() if recipe.protect else None,
    }
    return VariantResult(variant=plan.variant, model=attacker, log=log, checkpoint_path=ckpt,
                         protected_dir=protected_dir, provenance=provenance)


def export_logs(log: TrainingLog, out_dir: str, stem: str = "train_log") -> list[str]:
    """Write the loss CSV and one PNG curve per loss term."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [log.to_csv(os.path.join(out_dir, f"{stem}.csv"))]
    if log.rows:
        steps = [s for s, _ in log.rows]
        for term in LOG_COLUMNS[1:]:
            values = [b.as_dict()[term] for _, b in log.rows]
            fig, ax = plt.subplots(figsize=(4.0, 3.0), dpi=100)
            ax.plot(steps, values, lw=1.0)
            ax.set_xlabel("step")
            ax.set_ylabel(term)
            ax.set_title(term)
            fig.tight_layout()
            path = os.path.join(out_dir, f"loss_{term}.png")
            fig.savefig(path, metadata={"Software": None})
            plt.close(fig)
            paths.append(path)
    meta_path = os.path.join(out_dir, f"{stem}_meta.json")
    with open(meta_path, "w") as fh:
        fh.write(canonical_json(log.metadata))
    paths.append(meta_path)
    return paths


def run_eval(model: DeepfakeModel, source: FaceDataset, out_dir: str,
             margin: int | None = None, top_fraction: float = 0.02,
             masks_dir: str | None = None, variant: str | None = None,
             spectra: bool = True, spectrum_mode: str = "luma") -> MetricReport:
    """Swap the source's holdout faces into domain A and measure degradation.

    Swapped faces are written as 16-bit PNGs, metrics are computed from those
    files (not the in-memory tensors), and spectrum previews are emitted
    alongside when requested.
    """
    if source.resolution != model.config.resolution:
        raise ConfigurationError(
            f"source resolution {source.resolution} does not match model "
            f"resolution {model.config.resolution}")
    margin = default_margin(model.config.resolution) if margin is None else margin
    swap_dir = os.path.join(out_dir, "swapped")
    os.makedirs(swap_dir, exist_ok=True)
    with torch.no_grad():
        for i in source.holdout_indices:
            name = os.path.splitext(source.names[i])[0] + ".png"
            swapped = generate(model, source.faces[i], "A")
            write_png(os.path.join(swap_dir, name), swapped, bit_depth=16)
    report = evaluate_set(swap_dir, masks_dir=masks_dir, margin=margin,
                          top_fraction=top_fraction, variant=variant,
                          spectrum_mode=spectrum_mode)
    write_report(report, out_dir)
    if spectra:
        from .images import read_image
        for row in report.rows:
            spec = fft_magnitude(read_image(os.path.join(swap_dir, row["file"])), spectrum_mode)
            write_spectrum_png(spec, os.path.join(out_dir, "spectra", row["file"]))
    return report
