"""Degradation metrics for synthesized faces.

Two measures quantify how badly a face-swap model was disrupted:

  * AIH, the average intensity of the high-frequency region: the luma image
    (ITU-R 601 weights, scaled to 0..255) goes through an unnormalized 2-D
    DFT, and AIH is the mean magnitude over the center block of the
    unshifted spectrum, i.e. rows m..r-m-1 and columns m..c-m-1 where the
    margin m excludes the low-frequency bands parked at the corners.
    Disrupted models leave high-frequency artifacts, which raise AIH.

  * ATI, the average of the top intensities of a detection mask: the mean of
    the highest ceil(f * r * c) mask values. The denominator is that count;
    dividing by the full pixel count instead is available behind
    literal_denominator for comparison with conventions that do so.

Everything here is plain numpy in float64; nothing depends on torch.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import cv2
import numpy as np
import torch

from .errors import ConfigurationError, InputError
from .images import list_images, read_image, read_mask
from .utils import canonical_json

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
# Pre-scaled to the 0..255 range. Written out as literals because these three
# doubles sum to exactly 255.0, so a white pixel maps to luma 255 with no
# rounding; 255 * LUMA_WEIGHTS[k] would land one ulp off.
LUMA_WEIGHTS_255 = (76.245, 149.685, 29.07)


@dataclass
class Spectrum:
    """Unshifted 2-D DFT magnitudes of a luma image."""

    magnitudes: np.ndarray  # [H, W] float64, all >= 0


@dataclass
class DetectionMask:
    """Per-pixel detector response in [0, 1]."""

    values: np.ndarray  # [H, W] float
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError(f"mask must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InputError("mask contains non-finite values")
        if v.min() < 0 or v.max() > 1:
            raise InputError("mask values must lie in [0, 1]")
        self.values = v


def _to_numpy_face(face) -> np.ndarray:
    if isinstance(face, torch.Tensor):
        face = face.detach().cpu().numpy()
    face = np.asarray(face, dtype=np.float64)
    if face.ndim != 3 or face.shape[2] != 3:
        raise InputError(f"face must be [H, W, 3], got shape {face.shape}")
    if not np.isfinite(face).all():
        raise InputError("face contains non-finite values")
    return face


def luma255(face) -> np.ndarray:
    """ITU-R 601 luma in 0..255 as float64."""
    face = _to_numpy_face(face)
    r, g, b = LUMA_WEIGHTS_255
    return r * face[:, :, 0] + g * face[:, :, 1] + b * face[:, :, 2]


def fft_magnitude(face, mode: str = "luma") -> Spectrum:
    """Magnitude spectrum of a face, unshifted and unnormalized.

    mode "luma" (default) transforms the 0..255 luma plane; "channel_mean"
    averages the three per-channel magnitude spectra instead.
    """
    if mode == "luma":
        mags = np.abs(np.fft.fft2(luma255(face)))
    elif mode == "channel_mean":
        chans = _to_numpy_face(face) * 255.0
        mags = np.mean([np.abs(np.fft.fft2(chans[:, :, c])) for c in range(3)], axis=0)
    else:
        raise ConfigurationError(f"unknown spectrum mode {mode!r}")
    return Spectrum(magnitudes=mags)


def aih(spectrum: Spectrum, margin: int = 20) -> float:
    """Mean magnitude over the high-frequency center block of the spectrum."""
    mags = np.asarray(spectrum.magnitudes, dtype=np.float64)
    if mags.ndim != 2:
        raise InputError(f"spectrum must be 2-D, got shape {mags.shape}")
    r, c = mags.shape
    if not isinstance(margin, (int, np.integer)) or margin < 0:
        raise ConfigurationError(f"margin must be a non-negative integer, got {margin}")
    if r - 2 * margin < 1 or c - 2 * margin < 1:
        raise ConfigurationError(
            f"margin {margin} leaves no center block for a {r}x{c} spectrum")
    block = mags[margin:r - margin, margin:c - margin]
    return float(block.mean())


def default_margin(resolution: int) -> int:
    """Conventional AIH margin: 20, shrunk to a quarter side below 64."""
    return 20 if resolution >= 64 else max(1, resolution // 4)


def top_count(n_pixels: int, top_fraction: float) -> int:
    """Number of mask values in the top fraction: ceil(f * n), at least 1.

    The product is rounded to 9 decimals before the ceiling so that binary
    representation dust (0.02 * 2500 evaluating a hair above 50) cannot
    inflate the count.
    """
    if not (0 < top_fraction <= 1):
        raise ConfigurationError(f"top_fraction must be in (0, 1], got {top_fraction}")
    return max(1, min(n_pixels, int(math.ceil(round(top_fraction * n_pixels, 9)))))


def ati(mask: DetectionMask, top_fraction: float = 0.02,
        literal_denominator: bool = False) -> float:
    """Mean of the top-fraction mask values.

    With literal_denominator=True the top values are summed but divided by
    the full pixel count, matching formulations that normalize that way.
    """
    values = mask.values.ravel()
    k = top_count(values.size, top_fraction)
    top = np.partition(values, values.size - k)[values.size - k:]
    if literal_denominator:
        return float(top.sum() / values.size)
    # Mean around a pivot: residuals of a constant mask are exactly zero, so
    # the constant fixed point holds bit-for-bit; elsewhere the smaller
    # summands only tighten the rounding.
    pivot = float(top.min())
    return float(pivot + (top - pivot).sum() / k)


@dataclass
class MetricReport:
    """Per-image metric rows plus aggregate statistics."""

    variant: str | None = None
    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    skipped: list[dict] = field(default_factory=list)


def _aggregate(rows: list[dict]) -> dict:
    out: dict = {"count": len(rows)}
    for key in ("aih", "ati"):
        vals = np.array([r[key] for r in rows if r.get(key) is not None], dtype=np.float64)
        if vals.size:
            out[f"{key}_mean"] = float(vals.mean())
            out[f"{key}_std"] = float(vals.std())  # population std
            out[f"{key}_count"] = int(vals.size)
        else:
            out[f"{key}_mean"] = None
            out[f"{key}_std"] = None
            out[f"{key}_count"] = 0
    return out


def evaluate_set(images_dir: str, masks_dir: str | None = None, margin: int = 20,
                 top_fraction: float = 0.02, variant: str | None = None,
                 spectrum_mode: str = "luma") -> MetricReport:
    """Compute AIH (and ATI where masks exist) for every image in a directory.

    Masks pair with images by file name inside masks_dir. Unreadable or
    malformed entries are skipped with a warning and recorded in the report.
    """
    report = MetricReport(variant=variant)
    for name in list_images(images_dir):
        try:
            img = read_image(os.path.join(images_dir, name))
            row: dict = {"file": name,
                         "aih": aih(fft_magnitude(img, spectrum_mode), margin=margin),
                         "ati": None}
            if masks_dir is not None:
                mask_path = os.path.join(masks_dir, name)
                if os.path.exists(mask_path):
                    mask = DetectionMask(values=np.clip(read_mask(mask_path), 0.0, 1.0),
                                         source=name)
                    row["ati"] = ati(mask, top_fraction=top_fraction)
            report.rows.append(row)
        except Exception as exc:  # noqa: BLE001 - skip-and-record policy
            warnings.warn(f"skipping {name}: {exc}", stacklevel=2)
            report.skipped.append({"file": name, "error": str(exc)})
    report.aggregates = _aggregate(report.rows)
    return report


def write_report(report: MetricReport, out_dir: str) -> tuple[str, str]:
    """Write metrics.csv and metrics.json under out_dir; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "aih", "ati"])
        for row in report.rows:
            writer.writerow([row["file"],
                             f"{row['aih']:.9g}" if row["aih"] is not None else "",
                             f"{row['ati']:.9g}" if row["ati"] is not None else ""])
    json_path = os.path.join(out_dir, "metrics.json")
    payload = {"variant": report.variant, "rows": report.rows,
               "aggregates": report.aggregates, "skipped": report.skipped}
    with open(json_path, "w") as fh:
        fh.write(canonical_json(payload))
    return csv_path, json_path


def spectrum_image(spectrum: Spectrum) -> np.ndarray:
    """Displayable uint8 spectrum: shifted to center, log-compressed, normalized."""
    disp = np.log1p(np.fft.fftshift(np.asarray(spectrum.magnitudes, dtype=np.float64)))
    peak = disp.max()
    if peak > 0:
        disp = disp / peak
    return np.rint(disp * 255.0).astype(np.uint8)


def write_spectrum_png(spectrum: Spectrum, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if not cv2.imwrite(path, spectrum_image(spectrum)):
        raise InputError(f"failed to write {path}")
