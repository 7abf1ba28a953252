from __future__ import annotations

import json
import math

import numpy as np
import pandas as pd
import pytest

import phantom as ph
from conftest import slow
from data_model import SeriesKind, load_studies
from geometry import coarse_center, plane_normal, world_to_pixel

SMALL = ph.PhantomParams(frames=4, sax_positions=8, image_size=48, pixel_spacing_mm=3.0, noise_sigma=5.0)


def test_contraction_scale_cycle():
    assert ph.contraction_scale(0, 20, 0.2) == pytest.approx(1.0)
    assert ph.contraction_scale(10, 20, 0.2) == pytest.approx(0.8)
    assert ph.contraction_scale(5, 20, 0.2) == pytest.approx(0.9)


def test_analytic_volumes_and_phases():
    edv, esv = ph.analytic_volumes(ph.PhantomParams())
    assert edv == pytest.approx(4 / 3 * math.pi * 25 * 25 * 50 / 1000)
    assert esv == pytest.approx(edv * 0.8**3)
    assert ph.analytic_phases(ph.PhantomParams(frames=20)) == (0, 10)
    assert ph.analytic_phases(ph.PhantomParams(frames=7)) == (0, 3)


def test_params_validation():
    with pytest.raises(ValueError, match="semi-axes"):
        ph.PhantomParams(semi_axes_mm=(10.0, 0.0, 20.0))
    with pytest.raises(ValueError):
        ph.PhantomParams(kappa=1.0)


@pytest.mark.parametrize("axis", [(0.0, 0.0, 1.0), (0.0, 0.6, 0.8)])
def test_rendered_cavity_matches_analytic_volumes(axis):
    gap = 2.6
    params = ph.PhantomParams(
        frames=2,
        sax_positions=40,
        slice_gap_mm=gap,
        image_size=112,
        pixel_spacing_mm=1.0,
        noise_sigma=0.0,
        ring_mm=0.0,
        texture_amplitude=0.0,
        long_axis=axis,
    )
    generated = ph.generate_study(params)
    assert (generated.ed_index, generated.es_index) == (0, 1)
    blood = np.stack(generated.study.sax.frames)
    fraction = (blood - ph.BACKGROUND) / (ph.BLOOD - ph.BACKGROUND)
    measured = fraction.sum(axis=(0, 2, 3)) * gap / 1000.0
    assert measured[0] == pytest.approx(generated.truth.edv_ml, rel=0.02)
    assert measured[1] == pytest.approx(generated.truth.esv_ml, rel=0.02)


def test_sax_planes_are_perpendicular_to_long_axis():
    params = SMALL.model_copy(update={"long_axis": (0.3, 0.2, 1.0)})
    axis = np.asarray(params.long_axis) / np.linalg.norm(params.long_axis)
    planes = ph.sax_planes(params)
    assert len(planes) == 8
    for plane in planes:
        assert abs(float(np.dot(plane_normal(plane), axis))) == pytest.approx(1.0)
    for plane in ph.lax_planes(params).values():
        assert float(np.dot(plane_normal(plane), axis)) == pytest.approx(0.0, abs=1e-12)


def test_true_centers_follow_in_plane_offset():
    centered = ph.true_centers(SMALL, ph.sax_planes(SMALL))
    assert centered[0] == pytest.approx((23.5, 23.5))
    moved = SMALL.model_copy(update={"in_plane_offset_mm": (6.0, -3.0)})
    planes = ph.sax_planes(moved)
    row, col = ph.true_centers(moved, planes)[3]
    assert row == pytest.approx(23.5 - 2.0)
    assert col == pytest.approx(23.5 + 1.0)
    assert world_to_pixel(planes[3], (0.0, 0.0, ph.sax_offsets(moved)[3])) == pytest.approx((row, col))


def test_generated_study_brightest_at_cavity():
    generated = ph.generate_study(SMALL)
    study = generated.study
    assert study.has(SeriesKind.LAX_2CH) and study.has(SeriesKind.LAX_4CH)
    assert study.sax.position_count == 8 and study.sax.frame_count == 4
    mid = study.sax.frames[4][0]
    r, c = (round(x) for x in generated.centers[4])
    assert mid[r, c] > 700
    assert mid[0, 0] < 500


def test_generation_rejects_impossible_geometry():
    with pytest.raises(ValueError, match="outside every SAX slice"):
        ph.generate_study(SMALL.model_copy(update={"slice_gap_mm": 120.0}))
    with pytest.raises(ValueError, match="falls outside"):
        ph.generate_study(SMALL.model_copy(update={"in_plane_offset_mm": (200.0, 0.0)}))


def test_jitter_is_deterministic_and_bounded():
    variation = ph.PhantomVariation()
    a = ph.jittered_params(SMALL, variation, 3)
    assert a == ph.jittered_params(SMALL, variation, 3)
    assert a.study_id == "phantom-0003" and a.seed == 3
    assert 0.15 <= a.kappa <= 0.35
    assert 5.0 <= a.age_years <= 85.0
    for base_axis, axis in zip(SMALL.semi_axes_mm, a.semi_axes_mm, strict=True):
        assert abs(axis / base_axis - 1.0) <= 0.2
    plain = ph.jittered_params(SMALL, ph.PhantomVariation.none(), 3)
    assert plain.semi_axes_mm == SMALL.semi_axes_mm
    assert plain.kappa == SMALL.kappa and plain.in_plane_offset_mm == (0.0, 0.0)


def test_generate_dataset_is_reproducible():
    first = ph.generate_dataset(2, SMALL, threads=2)
    second = ph.generate_dataset(2, SMALL)
    assert [p.study.study_id for p in first] == ["phantom-0000", "phantom-0001"]
    for a, b in zip(first, second, strict=True):
        np.testing.assert_array_equal(a.study.sax.frames[2], b.study.sax.frames[2])
    with pytest.raises(ValueError, match="at least 1"):
        ph.generate_dataset(0)


def test_write_dataset_roundtrip(tmp_path):
    generated = ph.generate_dataset(2, SMALL)
    ph.write_dataset(generated, tmp_path)
    studies = load_studies(tmp_path)
    assert [s.study_id for s in studies] == ["phantom-0000", "phantom-0001"]
    assert studies[1].truth.edv_ml == pytest.approx(generated[1].truth.edv_ml)
    assert studies[0].sax.frame_count == 4
    table = pd.read_csv(tmp_path / ph.TRUTH_CSV)
    assert list(table.columns) == ["study_id", "edv_ml", "esv_ml", "age_years"]
    manifest = json.loads((tmp_path / ph.TRUTH_JSON).read_text())
    assert manifest["phantom-0001"]["es_index"] == 2
    assert len(manifest["phantom-0000"]["centers"]) == 8


def test_atlas_patches_shape_and_determinism():
    patches = ph.atlas_patches(2, seed=5)
    assert [p.shape for p in patches] == [(64, 64), (64, 64)]
    np.testing.assert_array_equal(patches[1], ph.atlas_patches(2, seed=5)[1])
    assert patches[0][32, 32] > 0.5


@slow
def test_coarse_center_lands_near_true_center_on_100_phantoms():
    hits = 0
    for generated in ph.generate_dataset(100, threads=4):
        study = generated.study
        ch2 = study.series[SeriesKind.LAX_2CH].planes[0]
        ch4 = study.series[SeriesKind.LAX_4CH].planes[0]
        worst = max(
            math.hypot(found.row - row, found.col - col)
            for plane, (row, col) in zip(study.sax.planes, generated.centers, strict=True)
            for found in [coarse_center(plane, ch2, ch4)]
        )
        hits += worst <= 10.0
    assert hits >= 95
