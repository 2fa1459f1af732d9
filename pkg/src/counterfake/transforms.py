"""Differentiable geometric transforms applied to faces.

A transform bundles scaling, rotation, translation and a smooth elastic warp.
It is applied by backward mapping: for every destination pixel we compute a
source coordinate, then bilinearly sample the input there with replicated
borders. Bilinear sampling is piecewise linear in the source image values, so
gradients flow through the transform to the image, which is what lets attack
iterations differentiate through a freshly sampled transform.

Coordinate conventions, fixed once here:
  * pixel (row i, col j) sits at coordinate (y=i, x=j); the image spans
    [0, H-1] x [0, W-1] and rotation/scaling pivot about the center
    ((H-1)/2, (W-1)/2);
  * translation is stored as a fraction of the image side, so a params value
    of 1/W shifts content exactly one pixel to the right (destination column
    j shows source column j-1);
  * warp offsets live on a coarse (grid x grid) lattice in source-pixel
    units, channel 0 = y offset, channel 1 = x offset, and are bilinearly
    upsampled to a dense displacement field whose corner control points sit
    on the image corners.

The identity transform reproduces the input bit for bit: every weight in the
sampling stencil is exactly 1 or 0 in that case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import ConfigurationError, DegenerateTransformError, InputError

DEFAULT_WARP_GRID = 5


@dataclass(frozen=True)
class TransformRanges:
    """Sampling intervals for random transform parameters.

    warp_amplitude_px is expressed at the working resolution; use
    for_resolution to get the conventional defaults (2 px at 64, scaled
    linearly with resolution).
    """

    scale: tuple[float, float] = (0.95, 1.05)
    rotation_deg: float = 10.0
    translation_frac: float = 0.05
    warp_amplitude_px: float = 2.0
    warp_grid: int = DEFAULT_WARP_GRID

    def __post_init__(self):
        lo, hi = self.scale
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo <= 0 or lo > hi:
            raise ConfigurationError(f"scale range must satisfy 0 < lo <= hi, got {self.scale}")
        for name in ("rotation_deg", "translation_frac", "warp_amplitude_px"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")
        if self.warp_grid < 2:
            raise ConfigurationError(f"warp_grid must be >= 2, got {self.warp_grid}")

    @classmethod
    def for_resolution(cls, resolution: int, **overrides) -> "TransformRanges":
        base = cls(warp_amplitude_px=2.0 * resolution / 64.0)
        return replace(base, **overrides) if overrides else base

    def collapsed(self) -> "TransformRanges":
        """Ranges that always sample the identity transform."""
        return TransformRanges(scale=(1.0, 1.0), rotation_deg=0.0, translation_frac=0.0,
                               warp_amplitude_px=0.0, warp_grid=self.warp_grid)

    def as_dict(self) -> dict:
        return {"scale": list(self.scale), "rotation_deg": self.rotation_deg,
                "translation_frac": self.translation_frac,
                "warp_amplitude_px": self.warp_amplitude_px, "warp_grid": self.warp_grid}


@dataclass(frozen=True, eq=False)
class TransformParams:
    """One concrete transform: scale factor, rotation, translation, warp field."""

    scale: float = 1.0
    rotation_deg: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)  # (x, y) as fraction of side
    warp_offsets: np.ndarray = field(
        default_factory=lambda: np.zeros((DEFAULT_WARP_GRID, DEFAULT_WARP_GRID, 2)))

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ConfigurationError(f"scale must be finite and > 0, got {self.scale}")
        off = np.asarray(self.warp_offsets, dtype=np.float64)
        if off.ndim != 3 or off.shape[0] != off.shape[1] or off.shape[2] != 2 or off.shape[0] < 2:
            raise ConfigurationError(f"warp_offsets must be [g, g, 2] with g >= 2, got {off.shape}")
        if not np.isfinite(off).all():
            raise ConfigurationError("warp_offsets contain non-finite values")
        object.__setattr__(self, "warp_offsets", off)

    @classmethod
    def identity(cls, warp_grid: int = DEFAULT_WARP_GRID) -> "TransformParams":
        return cls(warp_offsets=np.zeros((warp_grid, warp_grid, 2)))


def sample_params(ranges: TransformRanges, rng: np.random.Generator) -> TransformParams:
    """Draw one transform uniformly from the given ranges.

    Draw order is fixed (scale, rotation, tx, ty, warp field) so identical
    generator states always produce identical transforms.
    """
    lo, hi = ranges.scale
    scale = float(rng.uniform(lo, hi))
    rotation = float(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg))
    tx = float(rng.uniform(-ranges.translation_frac, ranges.translation_frac))
    ty = float(rng.uniform(-ranges.translation_frac, ranges.translation_frac))
    g = ranges.warp_grid
    amp = ranges.warp_amplitude_px
    offsets = rng.uniform(-amp, amp, size=(g, g, 2)) if amp > 0 else np.zeros((g, g, 2))
    return TransformParams(scale=scale, rotation_deg=rotation, translate=(tx, ty),
                           warp_offsets=offsets)


def bilinear_sample(img: torch.Tensor, src_y: torch.Tensor, src_x: torch.Tensor) -> torch.Tensor:
    """Sample img [H, W, C] at float coordinates with replicated borders.

    Out-of-range coordinates clamp to the edge, which replicates border
    pixels. Differentiable with respect to img (and to the coordinates away
    from integer points, though nothing here relies on that).
    """
    h, w = img.shape[0], img.shape[1]
    y0 = torch.floor(src_y)
    x0 = torch.floor(src_x)
    wy = (src_y - y0).unsqueeze(-1)
    wx = (src_x - x0).unsqueeze(-1)
    y0i = y0.long().clamp(0, h - 1)
    y1i = (y0.long() + 1).clamp(0, h - 1)
    x0i = x0.long().clamp(0, w - 1)
    x1i = (x0.long() + 1).clamp(0, w - 1)
    top = (1 - wx) * img[y0i, x0i] + wx * img[y0i, x1i]
    bottom = (1 - wx) * img[y1i, x0i] + wx * img[y1i, x1i]
    return (1 - wy) * top + wy * bottom


def _upsample_field(offsets: np.ndarray, h: int, w: int, dtype, device) -> tuple[torch.Tensor, torch.Tensor]:
    """Bilinearly upsample a coarse [g, g, 2] lattice to dense (dy, dx) maps."""
    g = offsets.shape[0]
    field_t = torch.as_tensor(offsets, dtype=dtype, device=device)
    ys = torch.arange(h, dtype=dtype, device=device) * ((g - 1) / (h - 1)) if h > 1 else torch.zeros(1, dtype=dtype, device=device)
    xs = torch.arange(w, dtype=dtype, device=device) * ((g - 1) / (w - 1)) if w > 1 else torch.zeros(1, dtype=dtype, device=device)
    gy = ys.unsqueeze(1).expand(h, w)
    gx = xs.unsqueeze(0).expand(h, w)
    dense = bilinear_sample(field_t, gy, gx)
    return dense[..., 0], dense[..., 1]


def apply_transform(face: torch.Tensor, params: TransformParams) -> torch.Tensor:
    """Apply a transform to a [H, W, C] float tensor by backward warping."""
    if not isinstance(face, torch.Tensor) or face.ndim != 3:
        raise InputError("apply_transform expects a [H, W, C] tensor")
    h, w = face.shape[0], face.shape[1]
    dtype, device = face.dtype, face.device
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    tx = params.translate[0] * w
    ty = params.translate[1] * h

    yd = torch.arange(h, dtype=dtype, device=device).unsqueeze(1).expand(h, w)
    xd = torch.arange(w, dtype=dtype, device=device).unsqueeze(0).expand(h, w)

    theta = math.radians(params.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    xr = xd - cx - tx
    yr = yd - cy - ty
    xu = cos_t * xr + sin_t * yr
    yu = -sin_t * xr + cos_t * yr
    sx = xu / params.scale + cx
    sy = yu / params.scale + cy

    dy, dx = _upsample_field(params.warp_offsets, h, w, dtype, device)
    sy = sy + dy
    sx = sx + dx

    outside = (sx < 0) | (sx > w - 1) | (sy < 0) | (sy > h - 1)
    if bool(outside.all()):
        raise DegenerateTransformError(
            "transform displaces every sampling point outside the image")
    return bilinear_sample(face, sy, sx)


# Augmentation used during model training: a slight zoom with a random
# sub-pixel crop plus a smooth warp. Zoom-in only, so the crop window always
# stays inside the image.
AUGMENT_MAX_ZOOM = 1.05
AUGMENT_WARP_AMPLITUDE_AT_64 = 2.0


def training_augment(face: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Random zoom-crop-warp used on every training sample.

    Consumes a fixed number of draws from rng (zoom, two offsets, warp
    lattice) regardless of the values drawn.
    """
    h, w = face.shape[0], face.shape[1]
    zoom = float(rng.uniform(1.0, AUGMENT_MAX_ZOOM))
    ox = float(rng.uniform(0.0, (w - 1) * (zoom - 1.0)))
    oy = float(rng.uniform(0.0, (h - 1) * (zoom - 1.0)))
    g = DEFAULT_WARP_GRID
    amp = AUGMENT_WARP_AMPLITUDE_AT_64 * h / 64.0
    offsets = rng.uniform(-amp, amp, size=(g, g, 2))

    dtype, device = face.dtype, face.device
    yd = torch.arange(h, dtype=dtype, device=device).unsqueeze(1).expand(h, w)
    xd = torch.arange(w, dtype=dtype, device=device).unsqueeze(0).expand(h, w)
    sy = (yd + oy) / zoom
    sx = (xd + ox) / zoom
    dy, dx = _upsample_field(offsets, h, w, dtype, device)
    return bilinear_sample(face, sy + dy, sx + dx)
