"""
Study / series / slice data model and the on-disk study directory format:

    <study>/meta.json
    <study>/sax/pos<i>/frame<j>.png
    <study>/2ch/frame<j>.png
    <study>/4ch/frame<j>.png

Pixels are stored as 16-bit grayscale PNG and converted to float64 on load.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal

import numpy as np
from PIL import Image

from errors import GeometryError, StudyFormatError
from geometry import ImagePlane
from services.json_store import load_json_document, write_json_atomic

log = logging.getLogger(__name__)

MIN_SAX_POSITIONS = 5
META_NAME = "meta.json"
_FRAME_RE = re.compile(r"^frame(\d+)\.png$")
_POS_RE = re.compile(r"^pos(\d+)$")


class SeriesKind(StrEnum):
    SAX = "sax"
    LAX_2CH = "2ch"
    LAX_4CH = "4ch"


LONG_AXIS_KINDS = (SeriesKind.LAX_2CH, SeriesKind.LAX_4CH)


@dataclass(frozen=True, eq=False)
class Slice:
    pixels: np.ndarray
    frame_index: int
    plane: ImagePlane


@dataclass(frozen=True, eq=False)
class Series:
    """One image series; `frames[p]` is the (frame, row, col) stack of spatial position p."""

    kind: SeriesKind
    planes: tuple[ImagePlane, ...]
    frames: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if not self.frames or len(self.frames) != len(self.planes):
            raise StudyFormatError(f"{self.kind}: every spatial position needs one plane and one frame stack")
        counts = {int(stack.shape[0]) for stack in self.frames}
        if len(counts) != 1:
            raise StudyFormatError(f"{self.kind}: frame-count mismatch across positions {sorted(counts)}")
        for stack in self.frames:
            if stack.ndim != 3 or stack.shape[1] < 1 or stack.shape[2] < 1:
                raise StudyFormatError(f"{self.kind}: pixel grids must be non-empty 2-D images")
            if not np.all(np.isfinite(stack)):
                raise StudyFormatError(f"{self.kind}: non-finite pixel intensities")
            stack.setflags(write=False)

    @property
    def position_count(self) -> int:
        return len(self.frames)

    @property
    def frame_count(self) -> int:
        return int(self.frames[0].shape[0])

    def slice(self, position: int, frame: int) -> Slice:
        return Slice(self.frames[position][frame], frame, self.planes[position])


@dataclass(frozen=True)
class VolumeTruth:
    edv_ml: float
    esv_ml: float

    def __post_init__(self) -> None:
        # EDV == ESV is allowed for zero-contraction phantoms.
        if not (self.esv_ml > 0 and self.edv_ml >= self.esv_ml):
            raise StudyFormatError(f"truth must satisfy EDV >= ESV > 0 (got {self.edv_ml}, {self.esv_ml})")


@dataclass(frozen=True, eq=False)
class Study:
    study_id: str
    series: Mapping[SeriesKind, Series]
    truth: VolumeTruth | None = None
    age_years: float | None = None
    notes: tuple[str, ...] = ()

    def has(self, kind: SeriesKind) -> bool:
        return kind in self.series

    @property
    def sax(self) -> Series:
        try:
            return self.series[SeriesKind.SAX]
        except KeyError:
            raise StudyFormatError(f"study {self.study_id} has no SAX series") from None


@dataclass(frozen=True)
class Finding:
    severity: Literal["warning", "fatal"]
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    study_id: str
    findings: tuple[Finding, ...] = field(default_factory=tuple)

    @property
    def fatal(self) -> bool:
        return any(f.severity == "fatal" for f in self.findings)

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]


def validate_study(study: Study) -> ValidationReport:
    findings: list[Finding] = []
    if not study.has(SeriesKind.SAX):
        findings.append(Finding("fatal", "sax_missing", "SAX series absent"))
    else:
        c = study.sax.position_count
        if c < MIN_SAX_POSITIONS:
            findings.append(
                Finding("fatal", "sax_too_shallow", f"SAX has {c} positions; at least {MIN_SAX_POSITIONS} required")
            )
        elif c == MIN_SAX_POSITIONS:
            findings.append(
                Finding("warning", "sax_degenerate", "SAX has 5 positions; mid and bottom roles collide")
            )
    if not study.has(SeriesKind.LAX_2CH):
        findings.append(Finding("warning", "2ch_missing", "fallback view set required"))
    if not study.has(SeriesKind.LAX_4CH):
        findings.append(Finding("warning", "4ch_missing", "4CH series absent"))
    return ValidationReport(study.study_id, tuple(findings))


# --- on-disk format -----------------------------------------------------------------------------


def _plane_from_meta(entry: Mapping[str, Any], extent: tuple[int, int], where: str) -> ImagePlane:
    try:
        return ImagePlane.from_vectors(
            entry["image_position_world_mm"],
            entry["row_cosine"],
            entry["col_cosine"],
            (float(entry["pixel_spacing_mm"][0]), float(entry["pixel_spacing_mm"][1])),
            extent,
        )
    except (KeyError, TypeError, IndexError, GeometryError) as e:
        raise StudyFormatError(f"{where}: malformed geometry in metadata sidecar ({e})") from e


def _plane_to_meta(plane: ImagePlane) -> dict[str, Any]:
    return {
        "pixel_spacing_mm": list(plane.spacing),
        "image_position_world_mm": list(plane.origin),
        "row_cosine": list(plane.row_dir),
        "col_cosine": list(plane.col_dir),
    }


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img, dtype=np.float64)
    except OSError as e:
        raise StudyFormatError(f"unreadable image file {path}: {e}") from e
    if arr.ndim != 2:
        raise StudyFormatError(f"{path}: expected a single-channel grayscale image")
    return arr


def quantize_u16(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(pixels, dtype=np.float64) + 0.5), 0, 65535).astype(np.uint16)


def write_png16(path: Path, pixels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize_u16(pixels)).save(path, format="PNG")


def _read_frame_stack(folder: Path, frame_count: int, where: str) -> np.ndarray:
    if not folder.is_dir():
        raise StudyFormatError(f"{where}: folder {folder} missing")
    present = sorted(int(m.group(1)) for p in folder.iterdir() if (m := _FRAME_RE.match(p.name)))
    if len(present) != frame_count or present != list(range(frame_count)):
        raise StudyFormatError(f"{where}: frame-count mismatch (sidecar {frame_count}, folder has {len(present)})")
    frames = [_read_png(folder / f"frame{j}.png") for j in range(frame_count)]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise StudyFormatError(f"{where}: frames differ in size {sorted(shapes)}")
    return np.stack(frames)


def _frame_count(entry: Mapping[str, Any], where: str) -> int:
    try:
        n = int(entry["frame_count"])
    except (KeyError, TypeError, ValueError) as e:
        raise StudyFormatError(f"{where}: frame_count missing or invalid") from e
    if n < 1:
        raise StudyFormatError(f"{where}: frame_count must be positive")
    return n


def load_study(path: Path) -> Study:
    path = Path(path)
    try:
        meta = load_json_document(path / META_NAME)
    except ValueError as e:
        raise StudyFormatError(f"malformed metadata sidecar: {e}") from e
    study_id = str(meta.get("study_id") or path.name)
    series_meta = meta.get("series")
    if not isinstance(series_meta, dict) or not isinstance(series_meta.get("sax"), dict):
        raise StudyFormatError(f"{study_id}: sidecar lacks a 'series.sax' entry")

    series: dict[SeriesKind, Series] = {}
    notes: list[str] = []

    sax_meta = series_meta["sax"]
    frame_count = _frame_count(sax_meta, f"{study_id}/sax")
    positions = sax_meta.get("positions")
    if not isinstance(positions, list) or not positions:
        raise StudyFormatError(f"{study_id}/sax: sidecar lists no positions")
    pos_dirs = sorted(int(m.group(1)) for p in (path / "sax").glob("pos*") if (m := _POS_RE.match(p.name)))
    if pos_dirs != list(range(len(positions))):
        raise StudyFormatError(f"{study_id}/sax: position folders {pos_dirs} do not match sidecar ({len(positions)})")
    stacks: list[np.ndarray] = []
    planes: list[ImagePlane] = []
    for i, entry in enumerate(positions):
        where = f"{study_id}/sax/pos{i}"
        stack = _read_frame_stack(path / "sax" / f"pos{i}", frame_count, where)
        stacks.append(stack)
        planes.append(_plane_from_meta(entry, (stack.shape[1], stack.shape[2]), where))
    series[SeriesKind.SAX] = Series(SeriesKind.SAX, tuple(planes), tuple(stacks))

    for kind in LONG_AXIS_KINDS:
        entry = series_meta.get(kind.value)
        folder = path / kind.value
        if not isinstance(entry, dict) or not folder.is_dir():
            notes.append(f"{kind.value} series absent")
            log.info("data_model: study=%s %s series absent", study_id, kind.value)
            continue
        where = f"{study_id}/{kind.value}"
        stack = _read_frame_stack(folder, _frame_count(entry, where), where)
        plane = _plane_from_meta(entry, (stack.shape[1], stack.shape[2]), where)
        series[kind] = Series(kind, (plane,), (stack,))

    truth = None
    raw_truth = meta.get("truth")
    if isinstance(raw_truth, dict):
        try:
            truth = VolumeTruth(float(raw_truth["edv_ml"]), float(raw_truth["esv_ml"]))
        except (KeyError, TypeError, ValueError) as e:
            raise StudyFormatError(f"{study_id}: malformed truth entry ({e})") from e
    age = meta.get("age_years")
    return Study(
        study_id=study_id,
        series=series,
        truth=truth,
        age_years=None if age is None else float(age),
        notes=tuple(notes),
    )


def write_study(study: Study, directory: Path) -> Path:
    directory = Path(directory)
    series_meta: dict[str, Any] = {}
    for kind, s in study.series.items():
        if kind == SeriesKind.SAX:
            series_meta["sax"] = {
                "frame_count": s.frame_count,
                "positions": [_plane_to_meta(p) for p in s.planes],
            }
            for i, stack in enumerate(s.frames):
                for j, frame in enumerate(stack):
                    write_png16(directory / "sax" / f"pos{i}" / f"frame{j}.png", frame)
        else:
            series_meta[kind.value] = {"frame_count": s.frame_count, **_plane_to_meta(s.planes[0])}
            for j, frame in enumerate(s.frames[0]):
                write_png16(directory / kind.value / f"frame{j}.png", frame)
    meta: dict[str, Any] = {"study_id": study.study_id, "series": series_meta}
    if study.truth is not None:
        meta["truth"] = {"edv_ml": study.truth.edv_ml, "esv_ml": study.truth.esv_ml}
    if study.age_years is not None:
        meta["age_years"] = study.age_years
    write_json_atomic(directory / META_NAME, meta)
    return directory


def study_dirs(root: Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise StudyFormatError(f"data root {root} is not a directory")
    return sorted(p for p in root.iterdir() if (p / META_NAME).is_file())


def load_studies(root: Path, threads: int = 1) -> list[Study]:
    dirs = study_dirs(root)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        studies = list(pool.map(load_study, dirs))
    log.info("data_model: loaded %d studies from %s", len(studies), root)
    return sorted(studies, key=lambda s: s.study_id)
