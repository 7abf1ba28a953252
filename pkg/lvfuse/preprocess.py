"""
Physical-space resampling, intensity standardization, cropping, resizing and augmentation.

Every interpolation here is bilinear on an align-corners grid, so constant and affine intensity
fields survive resampling exactly and a same-size resize is the identity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field
from scipy import ndimage

from errors import ShapeMismatchError

log = logging.getLogger(__name__)

TARGET_SPACING_MM = 1.4


@dataclass(frozen=True, eq=False)
class NormalizedImage:
    pixels: np.ndarray
    spacing_mm: float = TARGET_SPACING_MM
    degenerate: bool = False


class AugmentParams(BaseModel):
    max_rotation_deg: float = Field(default=15.0, ge=0.0, le=180.0)
    max_shift_px: int = Field(default=8, ge=0, le=64)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _as_image(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatchError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    return arr


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))


def resize(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    src = _as_image(img)
    h, w = int(target[0]), int(target[1])
    if h < 1 or w < 1:
        raise ValueError(f"resize target must be positive, got {target}")
    if (h, w) == src.shape:
        return src.copy()
    rows = _axis_coords(h, src.shape[0])
    cols = _axis_coords(w, src.shape[1])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(src, [rr, cc], order=1, mode="nearest")


def physical_shape(shape: tuple[int, int], spacing: tuple[float, float]) -> tuple[int, int]:
    """Output size after resampling to 1.4 mm pixels: round((PS / 1.4) * W) per axis."""
    return (
        max(1, _round_half_up(spacing[0] / TARGET_SPACING_MM * shape[0])),
        max(1, _round_half_up(spacing[1] / TARGET_SPACING_MM * shape[1])),
    )


def resample_to_physical(img: np.ndarray, spacing: tuple[float, float]) -> NormalizedImage:
    src = _as_image(img)
    if spacing[0] <= 0 or spacing[1] <= 0:
        raise ValueError(f"pixel spacing must be positive, got {spacing}")
    return NormalizedImage(resize(src, physical_shape(src.shape, spacing)), TARGET_SPACING_MM)


def map_to_physical(point: tuple[float, float], shape: tuple[int, int], spacing: tuple[float, float]) -> tuple[float, float]:
    """Pixel coordinates in the acquired grid -> coordinates in the resampled 1.4 mm grid."""
    out = physical_shape(shape, spacing)
    r_scale = (out[0] - 1) / (shape[0] - 1) if shape[0] > 1 else 1.0
    c_scale = (out[1] - 1) / (shape[1] - 1) if shape[1] > 1 else 1.0
    return point[0] * r_scale, point[1] * c_scale


def normalize_intensity(img: np.ndarray, spacing_mm: float = TARGET_SPACING_MM) -> NormalizedImage:
    src = _as_image(img)
    mean = float(src.mean())
    std = float(src.std())
    if std <= 1e-9 * max(1.0, abs(mean)):
        log.warning("preprocess: zero-variance image %s; returning zeros", src.shape)
        return NormalizedImage(np.zeros_like(src), spacing_mm, degenerate=True)
    return NormalizedImage((src - mean) / std, spacing_mm)


def crop_patch(
    img: np.ndarray,
    center: tuple[float, float],
    size: tuple[int, int],
    fill: float | None = None,
) -> np.ndarray:
    """Crop `size` around `center`; out-of-bounds area is filled with `fill` (image mean if None)."""
    src = _as_image(img)
    h, w = int(size[0]), int(size[1])
    if h < 1 or w < 1:
        raise ValueError(f"patch size must be positive, got {size}")
    top = _round_half_up(center[0]) - h // 2
    left = _round_half_up(center[1]) - w // 2
    value = float(src.mean()) if fill is None else float(fill)
    out = np.full((h, w), value, dtype=np.float64)
    r0, r1 = max(top, 0), min(top + h, src.shape[0])
    c0, c1 = max(left, 0), min(left + w, src.shape[1])
    if r0 < r1 and c0 < c1:
        out[r0 - top : r1 - top, c0 - left : c1 - left] = src[r0:r1, c0:c1]
    return out


def rotate(img: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    src = _as_image(img)
    if angle_deg == 0.0:
        return src.copy()
    return ndimage.rotate(src, angle_deg, reshape=False, order=1, mode="constant", cval=fill)


def shift(img: np.ndarray, offset: tuple[int, int], fill: float = 0.0) -> np.ndarray:
    src = _as_image(img)
    dr, dc = int(offset[0]), int(offset[1])
    out = np.full_like(src, fill)
    h, w = src.shape
    if abs(dr) >= h or abs(dc) >= w:
        return out
    out[max(dr, 0) : h + min(dr, 0), max(dc, 0) : w + min(dc, 0)] = src[
        max(-dr, 0) : h + min(-dr, 0), max(-dc, 0) : w + min(-dc, 0)
    ]
    return out


def draw_augmentation(rng_seed: int | np.random.SeedSequence, params: AugmentParams) -> tuple[float, tuple[int, int]]:
    rng = np.random.default_rng(rng_seed)
    angle = float(rng.uniform(-params.max_rotation_deg, params.max_rotation_deg)) if params.max_rotation_deg else 0.0
    if params.max_shift_px:
        dr, dc = rng.integers(-params.max_shift_px, params.max_shift_px + 1, size=2)
        return angle, (int(dr), int(dc))
    return angle, (0, 0)


def augment(img: np.ndarray, rng_seed: int | np.random.SeedSequence, params: AugmentParams, fill: float = 0.0) -> np.ndarray:
    angle, offset = draw_augmentation(rng_seed, params)
    return shift(rotate(img, angle, fill), offset, fill)
