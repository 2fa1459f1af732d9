"""Face datasets: directory ingestion, procedural synthesis, adversarial mixing.

A dataset is an ordered stack of same-resolution faces for one identity with
a deterministic train/holdout split: the last max(1, N // 10) faces (in name
order) are held out, the rest train. All faces are snapped to the 16-bit PNG
grid at ingestion so budget checks against files on disk are exact.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError, IngestionError, InputError
from .images import center_resize, list_images, quantize_to_grid, read_image
from .utils import rng_from


def split_indices(n: int) -> tuple[list[int], list[int]]:
    """Deterministic split: first 90% train, last max(1, n // 10) held out."""
    n_hold = max(1, n // 10)
    return list(range(n - n_hold)), list(range(n - n_hold, n))


@dataclass
class FaceDataset:
    identity: str
    faces: torch.Tensor                      # [N, H, W, 3] float32 in [0, 1]
    names: list[str] = field(default_factory=list)
    train_indices: list[int] = field(default_factory=list)
    holdout_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.faces, torch.Tensor) or self.faces.ndim != 4 or self.faces.shape[3] != 3:
            raise InputError("faces must be a [N, H, W, 3] tensor")
        n = self.faces.shape[0]
        if n < 2:
            raise IngestionError(f"dataset needs at least 2 faces, got {n}")
        if self.faces.shape[1] != self.faces.shape[2]:
            raise InputError("faces must be square")
        if not self.names:
            self.names = [f"face_{i:04d}.png" for i in range(n)]
        if len(self.names) != n or len(set(self.names)) != n:
            raise InputError("names must be unique and match the face count")
        if not self.train_indices and not self.holdout_indices:
            self.train_indices, self.holdout_indices = split_indices(n)
        if sorted(self.train_indices + self.holdout_indices) != list(range(n)):
            raise InputError("train and holdout indices must partition the dataset")
        lo, hi = float(self.faces.min()), float(self.faces.max())
        if lo < 0 or hi > 1:
            raise InputError(f"face values must lie in [0, 1], got [{lo:.4g}, {hi:.4g}]")

    @property
    def resolution(self) -> int:
        return int(self.faces.shape[1])

    def __len__(self) -> int:
        return int(self.faces.shape[0])

    def train_faces(self) -> torch.Tensor:
        return self.faces[self.train_indices]

    def holdout_faces(self) -> torch.Tensor:
        return self.faces[self.holdout_indices]

    def with_faces(self, faces: torch.Tensor) -> "FaceDataset":
        return FaceDataset(identity=self.identity, faces=faces, names=list(self.names),
                           train_indices=list(self.train_indices),
                           holdout_indices=list(self.holdout_indices))


def load_dataset(path: str, resolution: int, identity: str | None = None) -> FaceDataset:
    """Load every image under path, center-crop/resize, and split."""
    names = list_images(path)
    if not names:
        raise IngestionError(f"no images found under {path}")
    faces = []
    failures = []
    for name in names:
        try:
            img = read_image(os.path.join(path, name))
        except IngestionError as exc:
            failures.append(f"{name}: {exc}")
            continue
        faces.append(quantize_to_grid(center_resize(img, resolution), 16))
    if failures:
        raise IngestionError("unreadable images: " + "; ".join(failures))
    stack = torch.from_numpy(np.stack(faces))
    return FaceDataset(identity=identity or os.path.basename(os.path.normpath(path)),
                       faces=stack, names=names)


def _soft_ellipse(u, v, cu, cv, au, av, sharpness=None):
    """Smooth coverage of an ellipse at implicit-value 1; values in [0, 1]."""
    d = ((u - cu) / au) ** 2 + ((v - cv) / av) ** 2
    k = sharpness if sharpness is not None else max(1.5, 0.5 * min(au, av))
    return np.clip(0.5 + (1.0 - d) * k, 0.0, 1.0)


def _paint(canvas, alpha, color):
    return canvas * (1.0 - alpha[..., None]) + np.asarray(color)[None, None, :] * alpha[..., None]


def synth_faces(identity_seed: int, count: int, resolution: int,
                identity: str | None = None) -> FaceDataset:
    """Procedural face-like images: one identity, count poses.

    Identity-level attributes (skin tone, geometry, background) come from the
    identity stream; each image adds pose, expression and lighting jitter
    from its own per-index stream, so any subset of indices renders the same
    faces. The renders are smooth by construction, which keeps their
    high-frequency spectrum small, exactly the property the degradation
    metrics look for in clean models.
    """
    if count < 2:
        raise ConfigurationError(f"count must be >= 2, got {count}")
    ident = rng_from(identity_seed, "identity")
    res = resolution
    skin_r = ident.uniform(0.55, 0.85)
    skin = np.array([skin_r, skin_r * ident.uniform(0.72, 0.88), skin_r * ident.uniform(0.55, 0.75)])
    hair = ident.uniform(0.05, 0.45, size=3)
    bg_top = ident.uniform(0.15, 0.9, size=3)
    bg_bot = ident.uniform(0.15, 0.9, size=3)
    face_ax = ident.uniform(0.23, 0.30) * res
    face_ay = ident.uniform(0.30, 0.38) * res
    eye_dx = ident.uniform(0.11, 0.16) * res
    eye_dy = ident.uniform(0.08, 0.14) * res
    eye_r = ident.uniform(0.030, 0.050) * res
    iris = ident.uniform(0.05, 0.35, size=3)
    mouth_dy = ident.uniform(0.14, 0.20) * res
    mouth_w = ident.uniform(0.09, 0.15) * res
    mouth_h = ident.uniform(0.018, 0.040) * res
    mouth_color = np.array([ident.uniform(0.45, 0.75), ident.uniform(0.1, 0.25), ident.uniform(0.1, 0.3)])

    yy, xx = np.meshgrid(np.arange(res, dtype=np.float64),
                         np.arange(res, dtype=np.float64), indexing="ij")
    images = []
    for i in range(count):
        jit = rng_from(identity_seed, "face", i)
        cx = res / 2 + jit.uniform(-0.02, 0.02) * res
        cy = res * 0.52 + jit.uniform(-0.02, 0.02) * res
        theta = math.radians(jit.uniform(-8.0, 8.0))
        zoom = jit.uniform(0.92, 1.08)
        mouth_open = jit.uniform(0.55, 1.5)
        eye_open = jit.uniform(0.7, 1.2)
        brightness = jit.uniform(-0.05, 0.05)
        bg_phase = jit.uniform(-0.1, 0.1)

        cos_t, sin_t = math.cos(theta), math.sin(theta)
        u = (cos_t * (xx - cx) + sin_t * (yy - cy)) / zoom
        v = (-sin_t * (xx - cx) + cos_t * (yy - cy)) / zoom

        t = np.clip(yy / (res - 1) + bg_phase, 0.0, 1.0)[..., None]
        img = bg_top[None, None, :] * (1 - t) + bg_bot[None, None, :] * t
        img = _paint(img, _soft_ellipse(u, v, 0, -0.15 * res, face_ax * 1.15, face_ay * 1.05), hair)
        img = _paint(img, _soft_ellipse(u, v, 0, 0, face_ax, face_ay), skin)
        for side in (-1, 1):
            img = _paint(img, _soft_ellipse(u, v, side * eye_dx, -eye_dy,
                                            eye_r * 1.6, eye_r * eye_open), (0.93, 0.93, 0.93))
            img = _paint(img, _soft_ellipse(u, v, side * eye_dx, -eye_dy,
                                            eye_r * 0.7, eye_r * 0.7 * eye_open), iris)
        img = _paint(img, _soft_ellipse(u, v, 0, mouth_dy, mouth_w, mouth_h * mouth_open),
                     mouth_color)
        images.append(np.clip(img + brightness, 0.0, 1.0))
    stack = torch.from_numpy(np.stack([quantize_to_grid(im, 16) for im in images]))
    return FaceDataset(identity=identity or f"synth{identity_seed}", faces=stack)


def mix_adversarial(real: FaceDataset, protected: FaceDataset, percentage: float,
                    rng: np.random.Generator) -> tuple[FaceDataset, list[int]]:
    """Replace floor(percentage * N / 100) faces of real with protected ones.

    Replaced positions are drawn uniformly without replacement over the whole
    dataset; face order, names and the split stay put. Returns the mixed
    dataset and the sorted replaced indices. The two datasets must be
    index-aligned (same identity, names and untouched holdout faces).
    """
    if not np.isfinite(percentage) or not (0 <= percentage <= 100):
        raise ConfigurationError(f"percentage must be in [0, 100], got {percentage}")
    if real.identity != protected.identity or real.names != protected.names \
            or real.faces.shape != protected.faces.shape:
        raise ConfigurationError("real and protected datasets do not align")
    if not torch.equal(real.holdout_faces(), protected.holdout_faces()):
        raise ConfigurationError("protected dataset altered holdout faces; datasets do not align")
    n = len(real)
    k = int(math.floor(percentage * n / 100.0))
    chosen = sorted(int(i) for i in rng.choice(n, size=k, replace=False)) if k else []
    faces = real.faces.clone()
    for i in chosen:
        faces[i] = protected.faces[i]
    return real.with_faces(faces), chosen
