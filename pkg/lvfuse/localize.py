"""
Fine LV localization: multi-scale / multi-rotation atlas matching by mean absolute difference,
ROI extraction and projection across SAX positions, and ED/ES frame selection.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, Field

import geometry as geo
import preprocess as pp
from data_model import LONG_AXIS_KINDS, SeriesKind, Study, write_png16
from errors import GeometryError, ShapeMismatchError, StudyFormatError
from services.json_store import load_json_document, write_json_atomic

log = logging.getLogger(__name__)

ATLAS_SIZE = 64
MIN_SCALE_PX = 52
MAX_SCALE_PX = 72
TOP_POSITION = 1  # second SAX slice (0-based)
_CHUNK_ELEMS = 4_000_000


class LocalizationConfig(BaseModel):
    r_count: int = Field(default=6, ge=1, le=64)
    t_count: int = Field(default=12, ge=1, le=360)
    search_size: int = Field(default=100, ge=8, le=512)
    roi_size: int = Field(default=92, ge=8, le=512)
    atlas_patches: int = Field(default=50, ge=1, le=5000)


@dataclass(frozen=True, eq=False)
class Atlas:
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.shape != (ATLAS_SIZE, ATLAS_SIZE):
            raise ShapeMismatchError(f"atlas must be {ATLAS_SIZE}x{ATLAS_SIZE}, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("atlas contains non-finite values")


@dataclass(frozen=True, eq=False)
class AtlasVariant:
    scale_px: int
    rotation_deg: float
    pixels: np.ndarray


@dataclass(frozen=True, eq=False)
class AtlasBank:
    variants: tuple[AtlasVariant, ...]
    r_count: int
    t_count: int

    def __post_init__(self) -> None:
        if len(self.variants) != self.r_count * self.t_count:
            raise ValueError(f"bank holds {len(self.variants)} variants, expected R*T={self.r_count * self.t_count}")


@dataclass(frozen=True)
class MatchResult:
    center: tuple[int, int]
    offset: tuple[int, int]
    score: float
    variant_id: int


@dataclass(frozen=True, eq=False)
class Roi:
    center: tuple[float, float]
    pixels: np.ndarray
    score: float = 0.0
    variant_id: int = -1

    @property
    def size(self) -> tuple[int, int]:
        return int(self.pixels.shape[0]), int(self.pixels.shape[1])


# --- atlas -----------------------------------------------------------------------------------------


def build_atlas(patches: Sequence[np.ndarray]) -> Atlas:
    if not patches:
        raise ValueError("at least one patch is required to build an atlas")
    for p in patches:
        if np.shape(p) != (ATLAS_SIZE, ATLAS_SIZE):
            raise ShapeMismatchError(f"atlas patches must be {ATLAS_SIZE}x{ATLAS_SIZE}, got {np.shape(p)}")
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in patches])
    return Atlas(stack.mean(axis=0))


def variant_scales(r_count: int) -> list[int]:
    if r_count == 1:
        return [ATLAS_SIZE]
    step = (MAX_SCALE_PX - MIN_SCALE_PX) / (r_count - 1)
    return [int(np.floor(MIN_SCALE_PX + i * step + 0.5)) for i in range(r_count)]


def expand_atlas(atlas: Atlas, r_count: int, t_count: int) -> AtlasBank:
    if r_count < 1 or t_count < 1:
        raise ValueError("R and T must be at least 1")
    fill = float(atlas.pixels.mean())
    variants: list[AtlasVariant] = []
    for s in variant_scales(r_count):
        scaled = pp.resize(atlas.pixels, (s, s))
        for j in range(t_count):
            theta = j * 360.0 / t_count
            variants.append(AtlasVariant(s, theta, pp.rotate(scaled, theta, fill)))
    return AtlasBank(tuple(variants), r_count, t_count)


def save_atlas(atlas: Atlas, path: Path) -> None:
    lo = float(atlas.pixels.min())
    span = float(atlas.pixels.max()) - lo
    scale = 65535.0 / span if span > 0 else 1.0
    write_png16(Path(path), (atlas.pixels - lo) * scale)
    write_json_atomic(Path(path).with_suffix(".json"), {"offset": lo, "scale": scale})


def load_atlas(path: Path) -> Atlas:
    path = Path(path)
    try:
        from PIL import Image

        with Image.open(path) as img:
            stored = np.asarray(img, dtype=np.float64)
    except OSError as e:
        raise StudyFormatError(f"unreadable atlas file {path}: {e}") from e
    sidecar = path.with_suffix(".json")
    mapping = load_json_document(sidecar) if sidecar.is_file() else {"offset": 0.0, "scale": 1.0}
    return Atlas(stored / float(mapping["scale"]) + float(mapping["offset"]))


_default_atlas_cache: dict[tuple[int, int], Atlas] = {}
_cache_lock = threading.Lock()


def phantom_atlas(count: int = 50, seed: int = 2024) -> Atlas:
    """Mean of `count` phantom LV patches; cached per (count, seed)."""
    import phantom

    key = (count, seed)
    with _cache_lock:
        if key not in _default_atlas_cache:
            _default_atlas_cache[key] = build_atlas(phantom.atlas_patches(count, seed))
        return _default_atlas_cache[key]


def clear_cache() -> None:
    with _cache_lock:
        _default_atlas_cache.clear()


# --- matching --------------------------------------------------------------------------------------


def mad_score(window: np.ndarray, variant: np.ndarray) -> float:
    if np.shape(window) != np.shape(variant):
        raise ShapeMismatchError(f"window {np.shape(window)} and atlas variant {np.shape(variant)} differ")
    return float(np.mean(np.abs(np.asarray(window, dtype=np.float64) - variant)))


def _best_for_variant(search: np.ndarray, variant: np.ndarray, vid: int) -> tuple[float, int, int, int]:
    h, w = variant.shape
    windows = sliding_window_view(search, (h, w))
    n_rows, n_cols = windows.shape[0], windows.shape[1]
    step = max(1, _CHUNK_ELEMS // (n_cols * h * w))
    best = (np.inf, 0, 0)
    for r0 in range(0, n_rows, step):
        block = np.abs(windows[r0 : r0 + step] - variant).mean(axis=(2, 3))
        idx = int(np.argmin(block))
        r, c = divmod(idx, n_cols)
        if block.flat[idx] < best[0]:
            best = (float(block.flat[idx]), r0 + r, c)
    _, row, col = best
    return mad_score(search[row : row + h, col : col + w], variant), row, col, vid


def match_atlas(search: np.ndarray, bank: AtlasBank, threads: int = 1) -> MatchResult:
    """Global minimum MAD over all (window position, variant) pairs.

    Ties resolve to the lowest (row, col) window offset, then the lowest variant index.
    """
    search = np.asarray(search, dtype=np.float64)
    for vid, v in enumerate(bank.variants):
        if v.pixels.shape[0] > search.shape[0] or v.pixels.shape[1] > search.shape[1]:
            raise ShapeMismatchError(f"atlas variant {vid} ({v.pixels.shape}) larger than search patch {search.shape}")
    jobs = list(enumerate(bank.variants))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            candidates = list(pool.map(lambda job: _best_for_variant(search, job[1].pixels, job[0]), jobs))
    else:
        candidates = [_best_for_variant(search, v.pixels, vid) for vid, v in jobs]
    score, row, col, vid = min(candidates)
    h, w = bank.variants[vid].pixels.shape
    return MatchResult((row + h // 2, col + w // 2), (row, col), score, vid)


def refine_roi(
    slice_img: np.ndarray,
    coarse: tuple[float, float],
    bank: AtlasBank,
    config: LocalizationConfig | None = None,
    threads: int = 1,
) -> Roi:
    cfg = config or LocalizationConfig()
    img = np.asarray(slice_img, dtype=np.float64)
    s = cfg.search_size
    search = pp.crop_patch(img, coarse, (s, s))
    match = match_atlas(search, bank, threads)
    top = int(np.floor(coarse[0] + 0.5)) - s // 2
    left = int(np.floor(coarse[1] + 0.5)) - s // 2
    center = (float(top + match.center[0]), float(left + match.center[1]))
    pixels = pp.crop_patch(img, center, (cfg.roi_size, cfg.roi_size))
    return Roi(center, pixels, match.score, match.variant_id)


def project_roi(roi: Roi, from_plane: geo.ImagePlane, to_plane: geo.ImagePlane, target_img: np.ndarray) -> Roi:
    """Copy the ROI's pixel-coordinate center onto another slice of the same SAX stack."""
    n_from = geo.plane_normal(from_plane)
    n_to = geo.plane_normal(to_plane)
    if np.linalg.norm(np.cross(n_from, n_to)) > geo.PARALLEL_TOL:
        raise GeometryError("ROI projection needs slices of the same SAX series (parallel planes)")
    target = np.asarray(target_img, dtype=np.float64)
    row, col = roi.center
    clamped_row = min(max(row, 0.0), target.shape[0] - 1.0)
    clamped_col = min(max(col, 0.0), target.shape[1] - 1.0)
    if (clamped_row, clamped_col) != (row, col):
        log.warning(
            "localize: projected ROI center (%.1f, %.1f) clamped into %dx%d slice",
            row,
            col,
            target.shape[0],
            target.shape[1],
        )
    center = (clamped_row, clamped_col)
    return Roi(center, pp.crop_patch(target, center, roi.size), roi.score, roi.variant_id)


def select_ed_es(frames: Sequence[np.ndarray]) -> tuple[int, int]:
    """ED = frame with the largest ROI intensity sum, ES = smallest; ties go to the earliest frame."""
    if len(frames) < 2:
        raise ValueError("ED/ES selection needs at least two frames")
    sums = np.array([float(np.sum(f)) for f in frames])
    return int(np.argmax(sums)), int(np.argmin(sums))


# --- per-study chain -------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StudyLocalization:
    study_id: str
    sax_center: tuple[float, float]
    sax_frames: tuple[np.ndarray, ...]
    lax_centers: dict[SeriesKind, tuple[float, float]]
    lax_frames: dict[SeriesKind, np.ndarray]
    ed_index: int
    es_index: int
    coarse: geo.CoarseCenter | None = None
    roi_size: int = 92
    notes: tuple[str, ...] = field(default_factory=tuple)

    def sax_roi(self, position: int, frame: int) -> np.ndarray:
        return pp.crop_patch(self.sax_frames[position][frame], self.sax_center, (self.roi_size, self.roi_size))

    def lax_roi(self, kind: SeriesKind, frame: int) -> np.ndarray:
        return pp.crop_patch(self.lax_frames[kind][frame], self.lax_centers[kind], (self.roi_size, self.roi_size))


def _resample_stack(stack: np.ndarray, spacing: tuple[float, float]) -> np.ndarray:
    return np.stack([pp.resample_to_physical(f, spacing).pixels for f in stack])


def _image_center(shape: tuple[int, ...]) -> tuple[float, float]:
    return (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0


def localize_study(
    study: Study,
    bank: AtlasBank,
    config: LocalizationConfig | None = None,
    threads: int = 1,
) -> StudyLocalization:
    cfg = config or LocalizationConfig()
    sax = study.sax
    if sax.position_count <= TOP_POSITION:
        raise StudyFormatError(f"study {study.study_id}: SAX stack too shallow for localization")
    notes: list[str] = []
    sax_frames = tuple(_resample_stack(stack, plane.spacing) for stack, plane in zip(sax.frames, sax.planes, strict=True))
    top_plane = sax.planes[TOP_POSITION]
    top_img = sax_frames[TOP_POSITION][0]

    coarse: geo.CoarseCenter | None = None
    if study.has(SeriesKind.LAX_2CH) and study.has(SeriesKind.LAX_4CH):
        coarse = geo.coarse_center(
            top_plane, study.series[SeriesKind.LAX_2CH].planes[0], study.series[SeriesKind.LAX_4CH].planes[0]
        )
        start = pp.map_to_physical((coarse.row, coarse.col), top_plane.extent, top_plane.spacing)
    else:
        start = _image_center(top_img.shape)
        notes.append("coarse center from image center (long-axis plane missing)")
        log.info("localize: study=%s long-axis plane missing; coarse center = image center", study.study_id)

    roi = refine_roi(pp.normalize_intensity(top_img).pixels, start, bank, cfg, threads)
    log.debug("localize: study=%s top ROI center=(%.1f, %.1f) score=%.4f", study.study_id, *roi.center, roi.score)

    projected = [
        project_roi(roi, top_plane, plane, frames[0]).center for plane, frames in zip(sax.planes, sax_frames, strict=True)
    ]
    center = projected[TOP_POSITION]
    frame_count = sax.frame_count
    per_frame = [
        np.stack([pp.crop_patch(frames[f], c, roi.size) for frames, c in zip(sax_frames, projected, strict=True)])
        for f in range(frame_count)
    ]
    ed, es = select_ed_es(per_frame)

    lax_frames: dict[SeriesKind, np.ndarray] = {}
    lax_centers: dict[SeriesKind, tuple[float, float]] = {}
    for kind in LONG_AXIS_KINDS:
        if not study.has(kind):
            continue
        series = study.series[kind]
        frames = _resample_stack(series.frames[0], series.planes[0].spacing)
        lax_roi = refine_roi(
            pp.normalize_intensity(frames[0]).pixels, _image_center(frames[0].shape), bank, cfg, threads
        )
        lax_frames[kind] = frames
        lax_centers[kind] = lax_roi.center

    log.info("localize: study=%s ed=%d es=%d center=(%.1f, %.1f)", study.study_id, ed, es, *center)
    return StudyLocalization(
        study_id=study.study_id,
        sax_center=center,
        sax_frames=sax_frames,
        lax_centers=lax_centers,
        lax_frames=lax_frames,
        ed_index=ed,
        es_index=es,
        coarse=coarse,
        roi_size=cfg.roi_size,
        notes=tuple(notes),
    )
