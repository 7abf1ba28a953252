from __future__ import annotations

import numpy as np
import pytest

import localize as loc
import preprocess as pp
import views as vw
from data_model import SeriesKind
from errors import DegenerateStackError, MissingViewError


def _located(study, roi: int = 16, lax_frames: int | None = None) -> loc.StudyLocalization:
    lax = {}
    for kind in (SeriesKind.LAX_2CH, SeriesKind.LAX_4CH):
        if study.has(kind):
            stack = study.series[kind].frames[0]
            if lax_frames is not None:
                stack = np.stack([stack[0]] * lax_frames) + np.arange(lax_frames)[:, None, None]
            lax[kind] = stack
    return loc.StudyLocalization(
        study_id=study.study_id,
        sax_center=(15.0, 16.0),
        sax_frames=study.sax.frames,
        lax_centers={k: (14.0, 14.0) for k in lax},
        lax_frames=lax,
        ed_index=1,
        es_index=3,
        roi_size=roi,
    )


@pytest.mark.parametrize(("c", "m"), [(8, 5), (9, 6), (20, 11), (6, 4)])
def test_mid_index_table(c, m):
    assert vw.mid_index(c) == m


def test_classify_slices_roles():
    roles = vw.classify_slices(8)
    assert roles == {
        vw.ViewRole.BASE: 1,
        vw.ViewRole.TOP: 2,
        vw.ViewRole.MID: 5,
        vw.ViewRole.BOTTOM: 7,
        vw.ViewRole.APEX: 8,
    }


def test_classify_slices_rejects_shallow_and_colliding_stacks():
    with pytest.raises(DegenerateStackError, match="at least 5"):
        vw.classify_slices(4)
    with pytest.raises(DegenerateStackError, match="same slice"):
        vw.classify_slices(5)


def test_parse_view_set():
    assert vw.parse_view_set(" Top, mid ,2CH") == (vw.ViewRole.TOP, vw.ViewRole.MID, vw.ViewRole.CH2)
    assert vw.format_view_set(vw.PRIMARY_VIEW_SET) == "top,mid,2ch"


@pytest.mark.parametrize(
    ("text", "message"),
    [("", "empty"), ("top,top", "twice"), ("top,lax", "unknown"), ("base,mid", "network input")],
)
def test_parse_view_set_errors(text, message):
    with pytest.raises(ValueError, match=message):
        vw.parse_view_set(text)


def test_fallback_view_set_without_2ch(make_study):
    assert vw.fallback_view_set(make_study()) == vw.PRIMARY_VIEW_SET
    assert vw.fallback_view_set(make_study(lax=(SeriesKind.LAX_4CH,))) == vw.BACKUP_VIEW_SET


def test_assemble_input_channel_order_and_content(make_study):
    study = make_study()
    located = _located(study)
    fused = vw.assemble_input(study, (vw.ViewRole.MID, vw.ViewRole.CH4, vw.ViewRole.TOP), vw.Phase.ES, located, 32)
    assert fused.tensor.shape == (3, 32, 32)
    assert [r for r, _ in fused.channels] == [vw.ViewRole.MID, vw.ViewRole.CH4, vw.ViewRole.TOP]
    mid_roi = pp.crop_patch(study.sax.frames[4][3], (15.0, 16.0), (16, 16))
    expected = pp.normalize_intensity(pp.resize(mid_roi, (32, 32))).pixels
    np.testing.assert_allclose(fused.tensor[0], expected)
    for channel in fused.tensor:
        assert channel.mean() == pytest.approx(0.0, abs=1e-9)


def test_assemble_input_maps_lax_frames_proportionally(make_study):
    study = make_study(frames=4)
    located = _located(study, lax_frames=8)
    fused = vw.assemble_input(study, (vw.ViewRole.CH2,), vw.Phase.ED, located, 32)
    roi = pp.crop_patch(located.lax_frames[SeriesKind.LAX_2CH][2], (14.0, 14.0), (16, 16))
    np.testing.assert_allclose(fused.tensor[0], pp.normalize_intensity(pp.resize(roi, (32, 32))).pixels)


def test_assemble_input_missing_view_raises(make_study):
    study = make_study(lax=(SeriesKind.LAX_4CH,))
    with pytest.raises(MissingViewError) as info:
        vw.assemble_input(study, vw.PRIMARY_VIEW_SET, vw.Phase.ED, _located(study), 32)
    assert info.value.role == "2ch"


def test_sample_for_picks_phase_volume(make_study):
    study = make_study(truth=(130.0, 55.0))
    located = _located(study)
    ed = vw.sample_for(study, located, vw.BACKUP_VIEW_SET, vw.Phase.ED, 32)
    es = vw.sample_for(study, located, vw.BACKUP_VIEW_SET, vw.Phase.ES, 32)
    assert (ed.target_ml, es.target_ml) == (130.0, 55.0)
    assert ed.age_years == 40.0
    assert vw.sample_for(make_study(truth=None), located, vw.BACKUP_VIEW_SET, vw.Phase.ED) is None


def test_build_samples_skips_unusable_studies(make_study):
    studies = [
        make_study("a"),
        make_study("b", lax=(SeriesKind.LAX_4CH,)),
        make_study("c", truth=None),
        make_study("d", seed=1),
    ]
    localized = {s.study_id: _located(s) for s in studies}
    samples = vw.build_samples(studies, None, vw.PRIMARY_VIEW_SET, vw.Phase.ED, input_hw=32, localized=localized)
    assert [s.study_id for s in samples] == ["a", "d"]
    assert samples[0].inputs.shape == (3, 32, 32)


def test_build_samples_skips_five_position_stack_in_mixed_batch(make_study, caplog):
    studies = [make_study("a"), make_study("five", positions=5), make_study("b", seed=2)]
    usable = {s.study_id: _located(s) for s in studies if s.study_id != "five"}
    for localized in (usable, {s.study_id: _located(s) for s in studies}):
        samples = vw.build_samples(studies, None, vw.PRIMARY_VIEW_SET, vw.Phase.ES, input_hw=32, localized=localized)
        assert [s.study_id for s in samples] == ["a", "b"]
    assert "Mid and Bottom" in caplog.text


def test_unusable_reason_reports_degenerate_stack_only_for_sax_roles(make_study):
    five = make_study("five", positions=5)
    assert "5 positions" in vw.unusable_reason(five, vw.PRIMARY_VIEW_SET)
    assert vw.unusable_reason(five, (vw.ViewRole.CH2, vw.ViewRole.CH4)) is None
    assert vw.unusable_reason(make_study("ok"), vw.PRIMARY_VIEW_SET) is None
    assert vw.unusable_reason(make_study("no2ch", lax=(SeriesKind.LAX_4CH,)), vw.PRIMARY_VIEW_SET) == "lacks view 2ch"
