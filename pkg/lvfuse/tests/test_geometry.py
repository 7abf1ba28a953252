from __future__ import annotations

import numpy as np
import pytest

import geometry as geo
from errors import GeometryError, ParallelPlanesError


def _axial(origin=(-50.0, -50.0, 0.0), extent=(100, 100)) -> geo.ImagePlane:
    return geo.ImagePlane(origin, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0), extent)


def _xz() -> geo.ImagePlane:
    return geo.ImagePlane((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (1.0, 1.0), (64, 64))


def _yz() -> geo.ImagePlane:
    return geo.ImagePlane((0.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 1.0), (64, 64))


def _random_plane(rng: np.random.Generator) -> geo.ImagePlane:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return geo.ImagePlane(
        tuple(rng.uniform(-200, 200, 3)),
        tuple(q[:, 0]),
        tuple(q[:, 1]),
        tuple(rng.uniform(0.5, 2.5, 2)),
        (256, 256),
    )


def test_plane_normal_axial():
    assert geo.plane_normal(_axial()) == pytest.approx([0.0, 0.0, 1.0])


def test_plane_rejects_non_orthogonal_cosines():
    with pytest.raises(GeometryError, match="orthogonal"):
        geo.ImagePlane((0, 0, 0), (1.0, 0.0, 0.0), (0.6, 0.8, 0.0), (1.0, 1.0), (8, 8))


def test_plane_rejects_non_positive_spacing():
    with pytest.raises(GeometryError, match="spacing"):
        geo.ImagePlane((0, 0, 0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 1.0), (8, 8))


def test_from_vectors_normalizes_cosines():
    plane = geo.ImagePlane.from_vectors((0, 0, 0), (2.0, 0.0, 0.0), (0.0, 0.0, 5.0), (1.0, 1.0), (8, 8))
    assert plane.row_dir == pytest.approx((1.0, 0.0, 0.0))
    assert plane.col_dir == pytest.approx((0.0, 0.0, 1.0))


def test_intersect_orthogonal_planes_is_z_axis():
    line = geo.intersect_planes(_xz(), _yz())
    assert abs(line.direction[2]) == pytest.approx(1.0)
    assert line.point == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)


def test_intersect_parallel_planes_raises():
    shifted = geo.ImagePlane((0.0, 0.0, 5.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0), (8, 8))
    with pytest.raises(ParallelPlanesError):
        geo.intersect_planes(_axial(), shifted)


def test_line_parallel_to_plane_raises():
    line = geo.Line3D((0.0, 0.0, 1.0), (1.0, 0.0, 0.0))
    with pytest.raises(GeometryError, match="parallel"):
        geo.intersect_line_plane(line, _axial())


def test_pixel_world_roundtrip_with_anisotropic_spacing():
    plane = geo.ImagePlane((10.0, -4.0, 2.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0), (0.7, 1.9), (32, 48))
    world = geo.pixel_to_world(plane, 12.5, 3.25)
    assert geo.world_to_pixel(plane, world) == pytest.approx((12.5, 3.25))


def test_intersection_residuals_over_random_frames():
    rng = np.random.default_rng(11)
    worst = 0.0
    checked = 0
    while checked < 1000:
        a, b, c = (_random_plane(rng) for _ in range(3))
        try:
            line = geo.intersect_planes(a, b)
            hit = geo.intersect_line_plane(line, c)
        except GeometryError:
            continue
        for t in (-50.0, 0.0, 75.0):
            p = line.at(t)
            worst = max(worst, abs(geo.plane_residual(a, p)), abs(geo.plane_residual(b, p)))
        worst = max(worst, abs(geo.plane_residual(c, hit)))
        checked += 1
    assert worst < 1e-6


def test_coarse_center_on_axis_crossing():
    center = geo.coarse_center(_axial(), _xz(), _yz())
    assert center.in_extent
    assert (center.row, center.col) == pytest.approx((50.0, 50.0))


def test_coarse_center_outside_image_is_clamped_and_flagged():
    center = geo.coarse_center(_axial(origin=(10.0, 10.0, 0.0)), _xz(), _yz())
    assert not center.in_extent
    assert (center.row, center.col) == (0.0, 0.0)
