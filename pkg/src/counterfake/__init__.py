"""counterfake: disrupt GAN face-swap training and measure the damage.

The pipeline in one breath: pre-train a face-swap model on clean data, use
its critic to craft transformation-robust adversarial perturbations on the
faces you want to guard, train the attacker's model on the poisoned data, and
quantify how much worse its swapped faces look via spectral and mask-based
metrics.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import FaceDataset, load_dataset, mix_adversarial, synth_faces
from .errors import (ConfigurationError, CounterfakeError, DegenerateTransformError,
                     IngestionError, InputError, NumericError, TrainingDiverged)
from .experiments import (ExperimentPlan, TrainingLog, VariantRecipe, VARIANTS,
                          run_eval, run_pretrain, run_variant, train_model)
from .metrics import (DetectionMask, MetricReport, Spectrum, aih, ati, evaluate_set,
                      fft_magnitude)
from .model import (DeepfakeModel, LossBreakdown, LossWeights, ModelConfig, OptimizerState,
                    PatchScores, build_model, create_optimizers, discriminate,
                    discriminator_loss, edge_loss, generate, generator_loss,
                    perceptual_loss, train_step)
from .protect import (AttackConfig, EnsembleMember, EnsembleSpec, ProtectionResult,
                      ensemble_protect, fgsm_protect, mi_fgsm_protect, pgd_protect,
                      project_linf, protect_dataset, random_protect, real_label_loss)
from .transforms import TransformParams, TransformRanges, apply_transform, sample_params

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "ConfigurationError", "CounterfakeError", "DeepfakeModel",
    "DegenerateTransformError", "DetectionMask", "EnsembleMember", "EnsembleSpec",
    "ExperimentPlan", "FaceDataset", "IngestionError", "InputError", "LossBreakdown",
    "LossWeights", "MetricReport", "ModelConfig", "NumericError", "OptimizerState",
    "PatchScores", "ProtectionResult", "Spectrum", "TrainingDiverged", "TrainingLog",
    "TransformParams", "TransformRanges", "VARIANTS", "VariantRecipe", "aih",
    "apply_transform", "ati", "build_model", "create_optimizers", "discriminate",
    "discriminator_loss", "edge_loss", "ensemble_protect", "evaluate_set", "fft_magnitude",
    "fgsm_protect", "generate", "generator_loss", "load_checkpoint", "load_dataset",
    "mi_fgsm_protect", "mix_adversarial", "pgd_protect", "perceptual_loss", "project_linf",
    "protect_dataset", "random_protect", "real_label_loss", "run_eval", "run_pretrain",
    "run_variant", "sample_params", "save_checkpoint", "synth_faces", "train_model",
    "train_step",
]
