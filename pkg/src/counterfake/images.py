"""PNG input and output.

All in-memory images are float [H, W, 3] RGB in [0, 1]; files on disk are
8- or 16-bit PNGs. Writing supports a quantization mode that never moves a
pixel further from a reference image, which keeps perturbation budgets valid
across a save/load round trip.
"""

from __future__ import annotations

import os

import cv2
import numpy as np
import torch

from .errors import IngestionError, InputError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def read_image(path: str) -> np.ndarray:
    """Load an image file as float32 [H, W, 3] RGB in [0, 1]."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IngestionError(f"could not decode image: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise IngestionError(f"unsupported pixel type {raw.dtype} in {path}")
    img = raw.astype(np.float32) / scale
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    elif img.shape[2] == 4:
        img = img[:, :, :3][:, :, ::-1]
    elif img.shape[2] == 3:
        img = img[:, :, ::-1]
    else:
        raise IngestionError(f"unsupported channel count {img.shape[2]} in {path}")
    return np.ascontiguousarray(img)


def read_mask(path: str) -> np.ndarray:
    """Load a single-channel mask as float32 [H, W] in [0, 1]."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IngestionError(f"could not decode mask: {path}")
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    if raw.dtype == np.uint8:
        return raw.astype(np.float32) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(np.float32) / 65535.0
    return raw.astype(np.float32)


def _as_numpy(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    return np.asarray(img, dtype=np.float64)


def quantize_to_grid(img, bit_depth: int = 16) -> np.ndarray:
    """Snap values to the PNG quantization grid (k / levels), as float32.

    Images that pass through this survive a write/read round trip with their
    float32 values byte-identical, which is what lets perturbation budgets be
    checked exactly against files on disk.
    """
    levels = _levels(bit_depth)
    return (np.rint(np.clip(_as_numpy(img), 0.0, 1.0) * levels) / levels).astype(np.float32)


def _levels(bit_depth: int) -> float:
    if bit_depth == 8:
        return 255.0
    if bit_depth == 16:
        return 65535.0
    raise InputError(f"bit_depth must be 8 or 16, got {bit_depth}")


def write_png(path: str, img, bit_depth: int = 8) -> None:
    """Write [H, W, 3] float RGB in [0, 1] as a PNG, rounding to nearest."""
    levels = _levels(bit_depth)
    arr = np.clip(_as_numpy(img), 0.0, 1.0)
    enc = np.rint(arr * levels)
    enc = enc.astype(np.uint8 if bit_depth == 8 else np.uint16)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if not cv2.imwrite(path, np.ascontiguousarray(enc[:, :, ::-1])):
        raise IngestionError(f"failed to write {path}")


def write_png_toward(path: str, img, reference, bit_depth: int = 16) -> None:
    """Write img as a PNG, quantizing each pixel toward reference.

    Round-to-nearest can push a stored value up to half a quantization step
    further from the reference than the float value was. Here the offset from
    the reference is rounded toward zero instead, so the stored image is never
    farther from the reference than img was and an L-inf budget that holds in
    memory still holds on disk. The reference must already sit on the
    quantization grid (see quantize_to_grid); dataset ingestion guarantees
    that for every face in the pipeline.
    """
    levels = _levels(bit_depth)
    arr = np.clip(_as_numpy(img), 0.0, 1.0)
    ref = _as_numpy(reference)
    delta = arr - ref
    out = ref + np.sign(delta) * np.floor(np.abs(delta) * levels) / levels
    write_png(path, np.clip(out, 0.0, 1.0), bit_depth=bit_depth)


def list_images(directory: str) -> list[str]:
    """Sorted image file names (not paths) under directory."""
    if not os.path.isdir(directory):
        raise IngestionError(f"not a directory: {directory}")
    return [n for n in sorted(os.listdir(directory)) if n.lower().endswith(IMAGE_EXTENSIONS)]


def center_resize(img: np.ndarray, resolution: int) -> np.ndarray:
    """Center-crop to square then resize to resolution x resolution."""
    h, w = img.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = img[top:top + side, left:left + side]
    if side != resolution:
        interp = cv2.INTER_AREA if side > resolution else cv2.INTER_LINEAR
        crop = cv2.resize(crop, (resolution, resolution), interpolation=interp)
    return np.clip(crop, 0.0, 1.0).astype(np.float32)
