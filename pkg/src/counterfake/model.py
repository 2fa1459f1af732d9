"""The face-swap model: shared encoder, two decoders, two patch critics.

Domain "A" is the identity being protected (the target whose faces end up
swapped onto other footage), domain "B" the source identity. A swap pushes a
source face through the shared encoder and out the target's decoder.

Losses follow the usual reconstruction-GAN recipe: a non-saturating
adversarial term, L1 reconstruction, an L1 penalty on first-difference edge
maps, a cycle term through the opposite decoder and back, and a perceptual
distance in the feature space of a small frozen random conv net. All loss
helpers return scalar tensors so they can sit in an autograd graph; the
reported LossBreakdown carries plain floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import nets
from .errors import ConfigurationError, InputError, NumericError
from .transforms import training_augment
from .utils import as_face, check_finite, from_nchw, rng_from, to_nchw

PROB_EPS = 1e-7  # probability clamp for BCE terms

DOMAINS = ("A", "B")


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    recon: float = 10.0
    edge: float = 1.0
    cyc: float = 1.0
    perc: float = 0.1

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"loss weight {name} must be finite and >= 0, got {v}")

    def as_dict(self) -> dict:
        return {"adv": self.adv, "recon": self.recon, "edge": self.edge,
                "cyc": self.cyc, "perc": self.perc}


@dataclass(frozen=True)
class ModelConfig:
    resolution: int = 64
    channel_scale: float = 1.0
    attention_enabled: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    saturating_adv: bool = False

    def __post_init__(self):
        nets.validate_resolution(self.resolution)
        if not np.isfinite(self.channel_scale) or not (0 < self.channel_scale <= 4):
            raise ConfigurationError(f"channel_scale must be in (0, 4], got {self.channel_scale}")

    def as_dict(self) -> dict:
        return {"resolution": self.resolution, "channel_scale": self.channel_scale,
                "attention_enabled": self.attention_enabled,
                "loss_weights": self.loss_weights.as_dict(), "seed": self.seed,
                "saturating_adv": self.saturating_adv}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        weights = d.pop("loss_weights", {})
        return cls(loss_weights=LossWeights(**weights), **d)


@dataclass
class PatchScores:
    """Per-patch realness probabilities, one per 8x8 input patch."""

    grid: torch.Tensor  # [h, w] in (0, 1)


@dataclass(frozen=True)
class LossBreakdown:
    adv: float
    recon: float
    edge: float
    cyc: float
    perc: float
    total_g: float
    total_d: float

    def as_dict(self) -> dict:
        return {"adv": self.adv, "recon": self.recon, "edge": self.edge, "cyc": self.cyc,
                "perc": self.perc, "total_G": self.total_g, "total_D": self.total_d}


class DeepfakeModel:
    """Bundle of networks plus the frozen perceptual feature net."""

    COMPONENTS = ("encoder", "decoder_a", "decoder_b", "disc_a", "disc_b", "features")

    def __init__(self, config: ModelConfig, encoder, decoder_a, decoder_b,
                 disc_a, disc_b, features):
        self.config = config
        self.encoder = encoder
        self.decoder_a = decoder_a
        self.decoder_b = decoder_b
        self.disc_a = disc_a
        self.disc_b = disc_b
        self.features = features

    def components(self) -> dict:
        return {name: getattr(self, name) for name in self.COMPONENTS}

    def decoder(self, domain: str):
        return self.decoder_a if _domain(domain) == "A" else self.decoder_b

    def discriminator(self, domain: str):
        return self.disc_a if _domain(domain) == "A" else self.disc_b

    def generator_parameters(self) -> list:
        out = []
        for net in (self.encoder, self.decoder_a, self.decoder_b):
            out.extend(net.parameters())
        return out

    def discriminator_parameters(self) -> list:
        return list(self.disc_a.parameters()) + list(self.disc_b.parameters())

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Snapshot of all parameters as numpy arrays keyed by
        component.parameter path. Copies, so later updates do not leak in."""
        out = {}
        for comp, net in self.components().items():
            for pname, p in net.named_parameters():
                out[f"{comp}.{pname}"] = p.detach().cpu().numpy().copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = set()
        with torch.no_grad():
            for comp, net in self.components().items():
                for pname, p in net.named_parameters():
                    key = f"{comp}.{pname}"
                    expected.add(key)
                    if key not in arrays:
                        raise ConfigurationError(f"checkpoint missing parameter {key}")
                    vals = torch.from_numpy(np.asarray(arrays[key]))
                    if tuple(vals.shape) != tuple(p.shape):
                        raise ConfigurationError(
                            f"checkpoint shape mismatch for {key}: "
                            f"{tuple(vals.shape)} vs {tuple(p.shape)}")
                    p.copy_(vals.to(p.dtype))
        extra = set(arrays) - expected
        if extra:
            raise ConfigurationError(f"checkpoint has unexpected parameters: {sorted(extra)[:5]}")

    def to_dtype(self, dtype) -> "DeepfakeModel":
        for net in self.components().values():
            net.to(dtype)
        return self


def _domain(domain: str) -> str:
    d = str(domain).upper()
    if d not in DOMAINS:
        raise InputError(f"domain must be 'A' or 'B', got {domain!r}")
    return d


def build_model(config: ModelConfig) -> DeepfakeModel:
    """Construct and deterministically initialize all networks.

    Each component gets its own init stream keyed by component name, so two
    builds from the same config are parameter-identical.
    """
    res, scale, attn = config.resolution, config.channel_scale, config.attention_enabled
    encoder = nets.Encoder(res, scale, attn)
    decoder_a = nets.Decoder(res, scale, attn)
    decoder_b = nets.Decoder(res, scale, attn)
    disc_a = nets.PatchDiscriminator(scale, attn)
    disc_b = nets.PatchDiscriminator(scale, attn)
    features = nets.FeatureNet()
    model = DeepfakeModel(config, encoder, decoder_a, decoder_b, disc_a, disc_b, features)
    for comp, net in model.components().items():
        if comp == "features":
            continue
        nets.init_parameters(net, rng_from(config.seed, "init", comp))
    _init_feature_net(features, rng_from(config.seed, "init", "features"))
    for p in features.parameters():
        p.requires_grad_(False)
    return model


def _init_feature_net(net: nets.FeatureNet, rng: np.random.Generator) -> None:
    # He-style scaling keeps activation magnitudes close to the input's
    # through the ReLU stack, so the perceptual distance is well conditioned.
    with torch.no_grad():
        for name, p in sorted(net.named_parameters(), key=lambda kv: kv[0]):
            if name.endswith("bias"):
                p.zero_()
            else:
                fan_in = int(np.prod(p.shape[1:]))
                vals = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))


def generate(model: DeepfakeModel, face, target_domain: str) -> torch.Tensor:
    """Render a face through the target domain's decoder. [H, W, 3] -> same."""
    face = as_face(face)
    z = model.encoder(to_nchw(face))
    out = model.decoder(target_domain)(z)
    return from_nchw(out)[0]


def discriminate(model: DeepfakeModel, face, domain: str) -> PatchScores:
    """Score a face with one domain's patch critic."""
    face = as_face(face)
    grid = model.discriminator(domain)(to_nchw(face))[0, 0]
    return PatchScores(grid=grid)


def _grid_of(scores) -> torch.Tensor:
    grid = scores.grid if isinstance(scores, PatchScores) else scores
    if not isinstance(grid, torch.Tensor):
        raise InputError("scores must be PatchScores or a tensor")
    if torch.isnan(grid).any():
        raise NumericError("NaN in discriminator scores")
    return grid


def bce(scores, target: float) -> torch.Tensor:
    """Mean binary cross-entropy of a score grid against a constant label."""
    grid = torch.clamp(_grid_of(scores), PROB_EPS, 1.0 - PROB_EPS)
    if target not in (0.0, 1.0):
        raise InputError(f"target label must be 0 or 1, got {target}")
    if target == 1.0:
        return -torch.log(grid).mean()
    return -torch.log1p(-grid).mean()


def discriminator_loss(real_scores, transformed_scores, fake_scores) -> torch.Tensor:
    """Critic objective: real and transformed-real labeled 1, generated 0.

    With every grid at exactly 0.5 this is ln 2.
    """
    loss = (bce(real_scores, 1.0) + bce(transformed_scores, 1.0) + bce(fake_scores, 0.0)) / 3.0
    return check_finite(loss, "discriminator loss")


def edge_maps(img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward-difference edge maps along x and y, zero at the far border.

    The zero column/row is the difference of a replicated edge pixel with
    itself, keeping the maps the same shape as the image.
    """
    dx = torch.zeros_like(img)
    dy = torch.zeros_like(img)
    dx[..., :, :-1, :] = img[..., :, 1:, :] - img[..., :, :-1, :]
    dy[..., :-1, :, :] = img[..., 1:, :, :] - img[..., :-1, :, :]
    return dx, dy


def edge_loss(real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference of edge maps, averaged over both directions."""
    rdx, rdy = edge_maps(real)
    fdx, fdy = edge_maps(fake)
    return 0.5 * ((rdx - fdx).abs().mean() + (rdy - fdy).abs().mean())


def perceptual_loss(real: torch.Tensor, fake: torch.Tensor, features) -> torch.Tensor:
    """Sum of per-layer MSEs in the frozen feature net. Zero iff activations agree.

    Inputs are channel-last faces or batches of them.
    """
    real_feats = features(to_nchw(real))
    fake_feats = features(to_nchw(fake))
    total = real.new_zeros(())
    for rf, ff in zip(real_feats, fake_feats):
        total = total + torch.mean((rf - ff) ** 2)
    return total


def _adversarial_term(model: DeepfakeModel, generated_nchw: torch.Tensor, domain: str,
                      saturating: bool) -> torch.Tensor:
    scores = torch.clamp(model.discriminator(domain)(generated_nchw), PROB_EPS, 1.0 - PROB_EPS)
    if saturating:
        return torch.log1p(-scores).mean()
    return -torch.log(scores).mean()


def _generator_terms(model: DeepfakeModel, real, transformed, generated, cycled,
                     domain: str) -> dict[str, torch.Tensor]:
    """Unweighted generator loss terms for one domain, as graph tensors.

    Inputs are [B, H, W, 3] channel-last batches; `transformed` is accepted
    for interface symmetry (the reconstruction target is the untransformed
    face) and is unused here.
    """
    del transformed
    gen_nchw = to_nchw(generated)
    terms = {
        "adv": _adversarial_term(model, gen_nchw, domain, model.config.saturating_adv),
        "recon": (generated - real).abs().mean(),
        "edge": edge_loss(real, generated),
        "cyc": (cycled - real).abs().mean(),
        "perc": perceptual_loss(real, generated, model.features),
    }
    for name, t in terms.items():
        if not torch.isfinite(t):
            raise NumericError(f"non-finite generator loss term: {name}")
    return terms


TERM_ORDER = ("adv", "recon", "edge", "cyc", "perc")


def _weighted_total(terms: dict[str, float], weights: LossWeights) -> float:
    w = weights.as_dict()
    return float(sum(w[name] * terms[name] for name in TERM_ORDER))


def generator_loss(model: DeepfakeModel, real, transformed, generated, cycled,
                   domain: str = "A", total_d: float = float("nan")) -> LossBreakdown:
    """Report the generator objective for one domain as a LossBreakdown.

    total_G is the weighted sum of the five terms computed in float64 in the
    fixed order adv, recon, edge, cyc, perc, so the breakdown decomposes
    exactly.
    """
    real = real if real.ndim == 4 else real.unsqueeze(0)
    generated = generated if generated.ndim == 4 else generated.unsqueeze(0)
    cycled = cycled if cycled.ndim == 4 else cycled.unsqueeze(0)
    tensors = _generator_terms(model, real, transformed, generated, cycled, _domain(domain))
    terms = {k: float(v.detach()) for k, v in tensors.items()}
    return LossBreakdown(total_g=_weighted_total(terms, model.config.loss_weights),
                         total_d=total_d, **terms)


@dataclass
class OptimizerState:
    """Adam pair for the generator and critic sides plus a step counter."""

    g: torch.optim.Adam
    d: torch.optim.Adam
    step: int = 0


def create_optimizers(model: DeepfakeModel, lr: float = 2e-4,
                      betas: tuple[float, float] = (0.5, 0.999)) -> OptimizerState:
    if not np.isfinite(lr) or lr <= 0:
        raise ConfigurationError(f"lr must be finite and > 0, got {lr}")
    return OptimizerState(
        g=torch.optim.Adam(model.generator_parameters(), lr=lr, betas=betas),
        d=torch.optim.Adam(model.discriminator_parameters(), lr=lr, betas=betas),
    )


def _check_grads(params, what: str) -> None:
    for p in params:
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in {what}")


def _stack_batch(batch, resolution: int, name: str) -> torch.Tensor:
    if isinstance(batch, (list, tuple)):
        batch = torch.stack([as_face(f, name) for f in batch])
    if batch.ndim == 3:
        batch = batch.unsqueeze(0)
    if batch.ndim != 4 or batch.shape[3] != 3:
        raise InputError(f"{name} must be [B, H, W, 3], got {tuple(batch.shape)}")
    if batch.shape[1] != resolution or batch.shape[2] != resolution:
        raise InputError(f"{name} resolution {tuple(batch.shape[1:3])} does not match "
                         f"model resolution {resolution}")
    return batch


def train_step(model: DeepfakeModel, batch_a, batch_b, state: OptimizerState,
               rng: np.random.Generator) -> LossBreakdown:
    """One alternating critic/generator update on a pair of batches.

    The critic sees each domain's real faces, their augmented versions (also
    labeled real, which is what the protection attacks exploit) and that
    domain's reconstructions labeled fake. The generator then minimizes the
    weighted five-term objective on fresh forward passes. All augmentation
    randomness comes from rng in a fixed order: batch A first, then batch B.
    """
    res = model.config.resolution
    a = _stack_batch(batch_a, res, "batch_a")
    b = _stack_batch(batch_b, res, "batch_b")
    tr_a = torch.stack([training_augment(f, rng) for f in a])
    tr_b = torch.stack([training_augment(f, rng) for f in b])

    # Critic update. Generator outputs are detached via no_grad.
    with torch.no_grad():
        fake_a = from_nchw(model.decoder_a(model.encoder(to_nchw(tr_a))))
        fake_b = from_nchw(model.decoder_b(model.encoder(to_nchw(tr_b))))
    d_losses = []
    for domain, real, tr, fake in (("A", a, tr_a, fake_a), ("B", b, tr_b, fake_b)):
        disc = model.discriminator(domain)
        d_losses.append(discriminator_loss(disc(to_nchw(real))[:, 0],
                                           disc(to_nchw(tr))[:, 0],
                                           disc(to_nchw(fake))[:, 0]))
    total_d = 0.5 * (d_losses[0] + d_losses[1])
    check_finite(total_d, "discriminator loss")
    state.d.zero_grad(set_to_none=True)
    total_d.backward()
    _check_grads(model.discriminator_parameters(), "discriminator update")
    state.d.step()

    # Generator update on fresh graphs.
    per_domain = []
    for domain, real, tr, other in (("A", a, tr_a, "B"), ("B", b, tr_b, "A")):
        z = model.encoder(to_nchw(tr))
        gen = from_nchw(model.decoder(domain)(z))
        swapped = model.decoder(other)(z)
        cycled = from_nchw(model.decoder(domain)(model.encoder(swapped)))
        per_domain.append(_generator_terms(model, real, tr, gen, cycled, domain))
    combined = {k: 0.5 * (per_domain[0][k] + per_domain[1][k]) for k in TERM_ORDER}
    weights = model.config.loss_weights.as_dict()
    total_g = sum(weights[k] * combined[k] for k in TERM_ORDER)
    check_finite(total_g, "generator loss")
    state.g.zero_grad(set_to_none=True)
    total_g.backward()
    _check_grads(model.generator_parameters(), "generator update")
    state.g.step()
    state.step += 1

    floats = {k: float(v.detach()) for k, v in combined.items()}
    return LossBreakdown(total_g=_weighted_total(floats, model.config.loss_weights),
                         total_d=float(total_d.detach()), **floats)
