"""
Slice roles, mid-slice selection and fused multi-view network inputs.

SAX positions are 1-indexed in the role map: Base=1, Top=2, Mid=ceil(1 + C/2), Bottom=C-1, Apex=C.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

import localize as loc
import preprocess as pp
from data_model import MIN_SAX_POSITIONS, SeriesKind, Study
from errors import DegenerateStackError, MissingViewError

log = logging.getLogger(__name__)

DEFAULT_INPUT_HW = 224


class ViewRole(StrEnum):
    BASE = "base"
    TOP = "top"
    MID = "mid"
    BOTTOM = "bottom"
    APEX = "apex"
    CH2 = "2ch"
    CH4 = "4ch"


class Phase(StrEnum):
    ED = "ed"
    ES = "es"


SAX_ROLES = (ViewRole.BASE, ViewRole.TOP, ViewRole.MID, ViewRole.BOTTOM, ViewRole.APEX)
INPUT_ROLES = (ViewRole.TOP, ViewRole.MID, ViewRole.BOTTOM, ViewRole.CH2, ViewRole.CH4)
_LAX_SERIES = {ViewRole.CH2: SeriesKind.LAX_2CH, ViewRole.CH4: SeriesKind.LAX_4CH}

PRIMARY_VIEW_SET = (ViewRole.TOP, ViewRole.MID, ViewRole.CH2)
BACKUP_VIEW_SET = (ViewRole.TOP, ViewRole.MID)


@dataclass(frozen=True, eq=False)
class FusedInput:
    study_id: str
    roles: tuple[ViewRole, ...]
    phase: Phase
    tensor: np.ndarray

    @property
    def channels(self) -> list[tuple[ViewRole, np.ndarray]]:
        return list(zip(self.roles, self.tensor, strict=True))


@dataclass(frozen=True, eq=False)
class Sample:
    study_id: str
    inputs: np.ndarray
    target_ml: float
    age_years: float | None = None


def mid_index(c: int) -> int:
    if c < MIN_SAX_POSITIONS:
        raise DegenerateStackError(f"SAX stack has {c} positions; at least {MIN_SAX_POSITIONS} required")
    return math.ceil(1 + c / 2)


def classify_slices(c: int) -> dict[ViewRole, int]:
    roles = {
        ViewRole.BASE: 1,
        ViewRole.TOP: 2,
        ViewRole.MID: mid_index(c),
        ViewRole.BOTTOM: c - 1,
        ViewRole.APEX: c,
    }
    if len(set(roles.values())) != len(roles):
        raise DegenerateStackError(f"SAX stack with {c} positions maps Mid and Bottom to the same slice")
    return roles


def parse_view_set(text: str) -> tuple[ViewRole, ...]:
    """Parse a comma-separated role list such as ``top,mid,2ch``."""
    out: list[ViewRole] = []
    for raw in text.split(","):
        name = raw.strip().lower()
        if not name:
            continue
        try:
            role = ViewRole(name)
        except ValueError:
            raise ValueError(f"unknown view role {name!r} (expected one of {', '.join(r.value for r in INPUT_ROLES)})") from None
        if role not in INPUT_ROLES:
            raise ValueError(f"view role {role.value!r} cannot be used as a network input")
        if role in out:
            raise ValueError(f"view role {role.value!r} listed twice")
        out.append(role)
    if not out:
        raise ValueError("view set is empty")
    return tuple(out)


def format_view_set(roles: Iterable[ViewRole]) -> str:
    return ",".join(r.value for r in roles)


def fallback_view_set(study: Study) -> tuple[ViewRole, ...]:
    if study.has(SeriesKind.LAX_2CH):
        return PRIMARY_VIEW_SET
    log.warning("views: study=%s has no 2CH series; using the backup view set", study.study_id)
    return BACKUP_VIEW_SET


def missing_role(study: Study, view_set: Sequence[ViewRole]) -> ViewRole | None:
    for role in view_set:
        kind = _LAX_SERIES.get(role)
        if kind is not None and not study.has(kind):
            return role
    return None


def _phase_frame(localization: loc.StudyLocalization, phase: Phase, frame_count: int, sax_frames: int) -> int:
    idx = localization.ed_index if phase == Phase.ED else localization.es_index
    if frame_count == sax_frames:
        return idx
    return min(frame_count - 1, int(np.floor(idx * frame_count / sax_frames + 0.5)))


def _channel(roi: np.ndarray, input_hw: int) -> np.ndarray:
    return pp.normalize_intensity(pp.resize(roi, (input_hw, input_hw))).pixels


def assemble_input(
    study: Study,
    view_set: Sequence[ViewRole],
    phase: Phase,
    localization: loc.StudyLocalization,
    input_hw: int = DEFAULT_INPUT_HW,
) -> FusedInput:
    roles = tuple(view_set)
    if not roles:
        raise ValueError("view set is empty")
    absent = missing_role(study, roles)
    if absent is not None:
        raise MissingViewError(absent.value, study.study_id)
    sax_positions = study.sax.position_count
    sax_frames = study.sax.frame_count
    role_map: dict[ViewRole, int] | None = None
    channels: list[np.ndarray] = []
    for role in roles:
        if role in _LAX_SERIES:
            kind = _LAX_SERIES[role]
            frame = _phase_frame(localization, phase, int(localization.lax_frames[kind].shape[0]), sax_frames)
            roi = localization.lax_roi(kind, frame)
        else:
            if role not in INPUT_ROLES:
                raise ValueError(f"view role {role.value!r} cannot be used as a network input")
            if role_map is None:
                role_map = classify_slices(sax_positions)
            frame = _phase_frame(localization, phase, sax_frames, sax_frames)
            roi = localization.sax_roi(role_map[role] - 1, frame)
        channels.append(_channel(roi, input_hw))
    return FusedInput(study.study_id, roles, phase, np.stack(channels))


def unusable_reason(study: Study, view_set: Sequence[ViewRole]) -> str | None:
    """Why `study` cannot supply `view_set`, or None when it can."""
    absent = missing_role(study, view_set)
    if absent is not None:
        return f"lacks view {absent.value}"
    if any(role not in _LAX_SERIES for role in view_set):
        try:
            classify_slices(study.sax.position_count)
        except DegenerateStackError as e:
            return str(e)
    return None


def _skip_reason(study: Study, view_set: Sequence[ViewRole]) -> str | None:
    if study.truth is None:
        return "no truth volumes"
    return unusable_reason(study, view_set)


def sample_for(
    study: Study,
    localization: loc.StudyLocalization,
    view_set: Sequence[ViewRole],
    phase: Phase,
    input_hw: int = DEFAULT_INPUT_HW,
) -> Sample | None:
    """Fused input at `phase` paired with the matching truth volume; None when the study cannot supply one."""
    reason = _skip_reason(study, view_set)
    if reason is not None:
        log.warning("views: study=%s skipped: %s", study.study_id, reason)
        return None
    assert study.truth is not None
    fused = assemble_input(study, view_set, phase, localization, input_hw)
    volume = study.truth.edv_ml if phase == Phase.ED else study.truth.esv_ml
    return Sample(study.study_id, fused.tensor, volume, study.age_years)


def localize_all(
    studies: Sequence[Study],
    bank: loc.AtlasBank,
    loc_config: loc.LocalizationConfig | None = None,
    threads: int = 1,
) -> dict[str, loc.StudyLocalization]:
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        located = list(pool.map(lambda s: loc.localize_study(s, bank, loc_config), studies))
    return {s.study_id: item for s, item in zip(studies, located, strict=True)}


def build_samples(
    studies: Sequence[Study],
    bank: loc.AtlasBank,
    view_set: Sequence[ViewRole],
    target: Phase,
    loc_config: loc.LocalizationConfig | None = None,
    input_hw: int = DEFAULT_INPUT_HW,
    threads: int = 1,
    localized: Mapping[str, loc.StudyLocalization] | None = None,
) -> list[Sample]:
    """Samples for every study able to supply the view set, in study order."""
    usable = [s for s in studies if _skip_reason(s, view_set) is None]
    located = dict(localized or {})
    pending = [s for s in usable if s.study_id not in located]
    if pending:
        located.update(localize_all(pending, bank, loc_config, threads))
    samples: list[Sample] = []
    for study in studies:
        if study.study_id not in located:
            log.warning("views: study=%s skipped: %s", study.study_id, _skip_reason(study, view_set))
            continue
        sample = sample_for(study, located[study.study_id], view_set, target, input_hw)
        if sample is not None:
            samples.append(sample)
    log.info(
        "views: built %d/%d samples view_set=%s phase=%s",
        len(samples),
        len(studies),
        format_view_set(view_set),
        target.value,
    )
    return samples
