"""
Synthetic cardiac studies with exactly known volumes, centers and phases.

The LV cavity is a bright ellipsoid wrapped in a darker myocardial shell on a textured background.
Every semi-axis is scaled by s(t) = 1 - kappa * (1 - cos(2 pi t / F)) / 2 over the cycle, so frame 0
is end-diastole, frame F // 2 is end-systole and ESV = EDV * (1 - kappa) ** 3. SAX planes are
perpendicular to the long axis; the 2CH and 4CH planes contain it, 60 degrees apart.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import ndimage

import geometry as geo
import preprocess as pp
from data_model import Series, SeriesKind, Study, VolumeTruth, write_study
from services.json_store import write_json_atomic
from services.tables import write_rows

log = logging.getLogger(__name__)

BLOOD = 900.0
MYOCARDIUM = 120.0
BACKGROUND = 300.0
LAX_SEPARATION_DEG = 60.0
TRUTH_JSON = "truth.json"
TRUTH_CSV = "truth.csv"


class PhantomParams(BaseModel):
    semi_axes_mm: tuple[float, float, float] = (25.0, 25.0, 50.0)
    kappa: float = Field(default=0.2, ge=0.0, lt=1.0)
    frames: int = Field(default=20, ge=2, le=200)
    sax_positions: int = Field(default=10, ge=6, le=40)
    slice_gap_mm: float = Field(default=10.0, gt=0.0)
    noise_sigma: float = Field(default=15.0, ge=0.0)
    ring_mm: float = Field(default=6.0, ge=0.0)
    texture_amplitude: float = Field(default=40.0, ge=0.0)
    image_size: int = Field(default=112, ge=32, le=512)
    pixel_spacing_mm: float = Field(default=1.6, gt=0.0)
    center_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    long_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    in_plane_offset_mm: tuple[float, float] = (0.0, 0.0)
    lax_angle_deg: float = 0.0
    seed: int = Field(default=0, ge=0)
    age_years: float | None = 50.0
    study_id: str = "phantom-0000"

    @field_validator("semi_axes_mm")
    @classmethod
    def _positive_axes(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if min(v) <= 0:
            raise ValueError("semi-axes must be positive")
        return v


class PhantomVariation(BaseModel):
    size_jitter: float = Field(default=0.2, ge=0.0, lt=1.0)
    kappa_range: tuple[float, float] | None = (0.15, 0.35)
    center_offset_mm: float = Field(default=8.0, ge=0.0)
    lax_angle_jitter_deg: float = Field(default=20.0, ge=0.0)
    age_range: tuple[float, float] | None = (5.0, 85.0)

    @classmethod
    def none(cls) -> PhantomVariation:
        return cls(size_jitter=0.0, kappa_range=None, center_offset_mm=0.0, lax_angle_jitter_deg=0.0, age_range=None)


@dataclass(frozen=True, eq=False)
class PhantomStudy:
    study: Study
    truth: VolumeTruth
    centers: tuple[tuple[float, float], ...]
    ed_index: int
    es_index: int
    params: PhantomParams


def contraction_scale(t: int, frames: int, kappa: float) -> float:
    return 1.0 - kappa * (1.0 - math.cos(2.0 * math.pi * t / frames)) / 2.0


def analytic_volumes(params: PhantomParams) -> tuple[float, float]:
    a, b, c = params.semi_axes_mm
    edv = 4.0 / 3.0 * math.pi * a * b * c / 1000.0
    return edv, edv * (1.0 - params.kappa) ** 3


def analytic_phases(params: PhantomParams) -> tuple[int, int]:
    scales = [contraction_scale(t, params.frames, params.kappa) for t in range(params.frames)]
    return int(np.argmax(scales)), int(np.argmin(scales))


def _basis(axis: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w = np.asarray(geo.unit(axis))
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = helper - (helper @ w) * w
    u /= np.linalg.norm(u)
    return u, np.cross(w, u), w


def sax_offsets(params: PhantomParams) -> list[float]:
    """Signed distance of each SAX plane from the LV center along the long axis, base first."""
    half = (params.sax_positions - 1) / 2.0
    return [(half - k) * params.slice_gap_mm for k in range(params.sax_positions)]


def _plane(center: np.ndarray, row_dir: np.ndarray, col_dir: np.ndarray, params: PhantomParams) -> geo.ImagePlane:
    n = params.image_size
    sp = params.pixel_spacing_mm
    origin = center - (n - 1) / 2.0 * sp * row_dir - (n - 1) / 2.0 * sp * col_dir
    return geo.ImagePlane.from_vectors(origin, row_dir, col_dir, (sp, sp), (n, n))


def sax_planes(params: PhantomParams) -> list[geo.ImagePlane]:
    u, v, w = _basis(params.long_axis)
    center = np.asarray(params.center_mm, dtype=np.float64)
    du, dv = params.in_plane_offset_mm
    return [_plane(center + z * w + du * u + dv * v, u, v, params) for z in sax_offsets(params)]


def lax_planes(params: PhantomParams) -> dict[SeriesKind, geo.ImagePlane]:
    u, v, w = _basis(params.long_axis)
    center = np.asarray(params.center_mm, dtype=np.float64)
    out: dict[SeriesKind, geo.ImagePlane] = {}
    for kind, extra in ((SeriesKind.LAX_2CH, 0.0), (SeriesKind.LAX_4CH, LAX_SEPARATION_DEG)):
        phi = math.radians(params.lax_angle_deg + extra)
        out[kind] = _plane(center, -w, math.cos(phi) * u + math.sin(phi) * v, params)
    return out


def true_centers(params: PhantomParams, planes: Sequence[geo.ImagePlane]) -> list[tuple[float, float]]:
    _, _, w = _basis(params.long_axis)
    center = np.asarray(params.center_mm, dtype=np.float64)
    return [geo.world_to_pixel(p, center + z * w) for p, z in zip(planes, sax_offsets(params), strict=True)]


def _local_coords(plane: geo.ImagePlane, params: PhantomParams) -> np.ndarray:
    u, v, w = _basis(params.long_axis)
    rows, cols = plane.extent
    r = np.arange(rows, dtype=np.float64)[:, None, None] * plane.spacing[0]
    c = np.arange(cols, dtype=np.float64)[None, :, None] * plane.spacing[1]
    pts = np.asarray(plane.origin) + r * np.asarray(plane.row_dir) + c * np.asarray(plane.col_dir)
    rel = pts - np.asarray(params.center_mm, dtype=np.float64)
    return np.stack([rel @ u, rel @ v, rel @ w], axis=-1)


def _signed_distance(local: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """First-order distance (mm) to the ellipsoid surface; negative inside."""
    q = local / axes
    rho = np.sqrt(np.sum(q * q, axis=-1))
    grad = np.sqrt(np.sum((local / axes**2) ** 2, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(rho > 1e-9, (rho - 1.0) * rho / np.maximum(grad, 1e-12), -float(axes.min()))
    return d


def _render(local: np.ndarray, params: PhantomParams, scale: float, texture: np.ndarray, pixel_mm: float) -> np.ndarray:
    inner = np.asarray(params.semi_axes_mm) * scale
    outer = inner + params.ring_mm
    w_in = np.clip(0.5 - _signed_distance(local, inner) / pixel_mm, 0.0, 1.0)
    w_out = np.maximum(np.clip(0.5 - _signed_distance(local, outer) / pixel_mm, 0.0, 1.0), w_in)
    return (BACKGROUND + texture) * (1.0 - w_out) + MYOCARDIUM * (w_out - w_in) + BLOOD * w_in


def _texture(rng: np.random.Generator, shape: tuple[int, int], amplitude: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.normal(size=shape), sigma=2.0)
    std = float(field.std())
    return field / std * amplitude if std > 0 else np.zeros(shape)


def _render_series(
    plane: geo.ImagePlane, params: PhantomParams, texture: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    local = _local_coords(plane, params)
    pixel_mm = min(plane.spacing)
    frames = []
    for t in range(params.frames):
        img = _render(local, params, contraction_scale(t, params.frames, params.kappa), texture, pixel_mm)
        if params.noise_sigma > 0:
            img = img + rng.normal(0.0, params.noise_sigma, size=img.shape)
        frames.append(np.clip(img, 0.0, None))
    return np.stack(frames)


def generate_study(params: PhantomParams) -> PhantomStudy:
    offsets = sax_offsets(params)
    if min(abs(z) for z in offsets) >= params.semi_axes_mm[2]:
        raise ValueError("phantom geometry places the LV outside every SAX slice")
    planes = sax_planes(params)
    centers = true_centers(params, planes)
    n = params.image_size
    for row, col in centers:
        if not (0 <= row <= n - 1 and 0 <= col <= n - 1):
            raise ValueError(f"LV center ({row:.1f}, {col:.1f}) falls outside the {n}x{n} image")
    laxes = lax_planes(params)

    rng = np.random.default_rng(params.seed)
    sax_textures = [_texture(rng, (n, n), params.texture_amplitude) for _ in planes]
    lax_textures = {k: _texture(rng, (n, n), params.texture_amplitude) for k in laxes}
    sax_stacks = tuple(_render_series(p, params, tex, rng) for p, tex in zip(planes, sax_textures, strict=True))
    series: dict[SeriesKind, Series] = {SeriesKind.SAX: Series(SeriesKind.SAX, tuple(planes), sax_stacks)}
    for kind, plane in laxes.items():
        series[kind] = Series(kind, (plane,), (_render_series(plane, params, lax_textures[kind], rng),))

    edv, esv = analytic_volumes(params)
    ed, es = analytic_phases(params)
    truth = VolumeTruth(edv, esv)
    study = Study(params.study_id, series, truth, params.age_years)
    return PhantomStudy(study, truth, tuple(centers), ed, es, params)


def jittered_params(base: PhantomParams, variation: PhantomVariation, index: int) -> PhantomParams:
    seed = base.seed + index
    rng = np.random.default_rng([seed, 7919])
    j = variation.size_jitter
    axes = tuple(float(a * (1.0 + rng.uniform(-j, j))) if j else a for a in base.semi_axes_mm)
    update: dict[str, object] = {
        "seed": seed,
        "study_id": f"phantom-{index:04d}",
        "semi_axes_mm": axes,
    }
    if variation.kappa_range is not None:
        update["kappa"] = float(rng.uniform(*variation.kappa_range))
    if variation.center_offset_mm:
        update["in_plane_offset_mm"] = tuple(float(x) for x in rng.uniform(-variation.center_offset_mm, variation.center_offset_mm, 2))
    if variation.lax_angle_jitter_deg:
        update["lax_angle_deg"] = base.lax_angle_deg + float(rng.uniform(-variation.lax_angle_jitter_deg, variation.lax_angle_jitter_deg))
    if variation.age_range is not None:
        update["age_years"] = round(float(rng.uniform(*variation.age_range)), 1)
    return base.model_copy(update=update)


def generate_dataset(
    n: int,
    base: PhantomParams | None = None,
    variation: PhantomVariation | None = None,
    threads: int = 1,
) -> list[PhantomStudy]:
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    base = base or PhantomParams()
    variation = variation if variation is not None else PhantomVariation()
    params = [jittered_params(base, variation, i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        studies = list(pool.map(generate_study, params))
    log.info("phantom: generated %d studies base_seed=%d", n, base.seed)
    return studies


def write_dataset(studies: Sequence[PhantomStudy], out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, object] = {}
    rows = []
    for ps in studies:
        sid = ps.study.study_id
        write_study(ps.study, out_dir / sid)
        manifest[sid] = {
            "edv_ml": ps.truth.edv_ml,
            "esv_ml": ps.truth.esv_ml,
            "ed_index": ps.ed_index,
            "es_index": ps.es_index,
            "age_years": ps.params.age_years,
            "centers": [list(c) for c in ps.centers],
        }
        rows.append((sid, ps.truth.edv_ml, ps.truth.esv_ml, ps.params.age_years))
    write_json_atomic(out_dir / TRUTH_JSON, manifest)
    write_rows(out_dir / TRUTH_CSV, ("study_id", "edv_ml", "esv_ml", "age_years"), rows)
    log.info("phantom: wrote %d studies to %s", len(studies), out_dir)
    return out_dir


def atlas_patches(count: int, seed: int, size: int = 64) -> list[np.ndarray]:
    """LV-centered patches from z-scored, resampled top SAX slices (frame 0) of jittered phantoms."""
    base = PhantomParams(seed=seed)
    variation = PhantomVariation(age_range=None, lax_angle_jitter_deg=0.0)
    patches: list[np.ndarray] = []
    for i in range(count):
        params = jittered_params(base, variation, i)
        planes = sax_planes(params)
        plane = planes[1]
        center = true_centers(params, planes)[1]
        rng = np.random.default_rng([params.seed, 104729])
        texture = _texture(rng, plane.extent, params.texture_amplitude)
        img = _render(_local_coords(plane, params), params, 1.0, texture, min(plane.spacing))
        if params.noise_sigma > 0:
            img = img + rng.normal(0.0, params.noise_sigma, size=img.shape)
        resampled = pp.resample_to_physical(img, plane.spacing).pixels
        mapped = pp.map_to_physical(center, plane.extent, plane.spacing)
        patches.append(pp.crop_patch(pp.normalize_intensity(resampled).pixels, mapped, (size, size)))
    return patches
