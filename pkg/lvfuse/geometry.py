"""
Image-plane geometry: pixel/world transforms and the long-axis/short-axis plane intersections
that give the coarse LV center on each short-axis slice.

Convention: the row index advances along `row_dir` in steps of `spacing[0]` mm and the column
index along `col_dir` in steps of `spacing[1]` mm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from errors import GeometryError, ParallelPlanesError

log = logging.getLogger(__name__)

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-6
PARALLEL_TOL = 1e-6

Vec3 = tuple[float, float, float]


def _vec3(v: object) -> Vec3:
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise GeometryError(f"expected a finite 3-vector, got {v!r}")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


def unit(v: object) -> Vec3:
    arr = np.asarray(_vec3(v))
    n = float(np.linalg.norm(arr))
    if n < PARALLEL_TOL:
        raise GeometryError("cannot normalize a zero-length vector")
    return _vec3(arr / n)


@dataclass(frozen=True)
class ImagePlane:
    origin: Vec3
    row_dir: Vec3
    col_dir: Vec3
    spacing: tuple[float, float]
    extent: tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "row_dir", _vec3(self.row_dir))
        object.__setattr__(self, "col_dir", _vec3(self.col_dir))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))
        object.__setattr__(self, "extent", (int(self.extent[0]), int(self.extent[1])))
        r = np.asarray(self.row_dir)
        c = np.asarray(self.col_dir)
        if abs(np.linalg.norm(r) - 1.0) > UNIT_TOL or abs(np.linalg.norm(c) - 1.0) > UNIT_TOL:
            raise GeometryError("row/col direction cosines must be unit vectors")
        if abs(float(r @ c)) > ORTHO_TOL:
            raise GeometryError("row/col direction cosines must be orthogonal")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise GeometryError("pixel spacing must be positive")
        if self.extent[0] < 1 or self.extent[1] < 1:
            raise GeometryError("plane extent must be at least 1x1")

    @classmethod
    def from_vectors(
        cls,
        origin: object,
        row_dir: object,
        col_dir: object,
        spacing: tuple[float, float],
        extent: tuple[int, int],
    ) -> ImagePlane:
        """Build a plane from approximately unit cosines (normalized here, orthogonality still checked)."""
        return cls(_vec3(origin), unit(row_dir), unit(col_dir), spacing, extent)


@dataclass(frozen=True)
class Line3D:
    point: Vec3
    direction: Vec3

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", _vec3(self.point))
        object.__setattr__(self, "direction", _vec3(self.direction))
        if abs(np.linalg.norm(self.direction) - 1.0) > UNIT_TOL:
            raise GeometryError("line direction must be a unit vector")

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.point) + t * np.asarray(self.direction)


@dataclass(frozen=True)
class CoarseCenter:
    row: float
    col: float
    in_extent: bool


def plane_normal(plane: ImagePlane) -> np.ndarray:
    n = np.cross(np.asarray(plane.row_dir), np.asarray(plane.col_dir))
    norm = float(np.linalg.norm(n))
    if norm < PARALLEL_TOL:
        raise GeometryError("plane direction vectors are degenerate (near-parallel)")
    return n / norm


def plane_residual(plane: ImagePlane, p: object) -> float:
    """Signed distance (mm) of a world point from the plane."""
    return float(plane_normal(plane) @ (np.asarray(_vec3(p)) - np.asarray(plane.origin)))


def intersect_planes(a: ImagePlane, b: ImagePlane) -> Line3D:
    na = plane_normal(a)
    nb = plane_normal(b)
    d = np.cross(na, nb)
    dn = float(np.linalg.norm(d))
    if dn <= PARALLEL_TOL:
        raise ParallelPlanesError("planes are parallel; no unique intersection line")
    d = d / dn
    # Point on both planes closest to the world origin: the third row pins it along d.
    system = np.stack([na, nb, d])
    rhs = np.array([na @ np.asarray(a.origin), nb @ np.asarray(b.origin), 0.0])
    point = np.linalg.solve(system, rhs)
    return Line3D(_vec3(point), _vec3(d))


def intersect_line_plane(line: Line3D, plane: ImagePlane) -> np.ndarray:
    n = plane_normal(plane)
    d = np.asarray(line.direction)
    denom = float(d @ n)
    if abs(denom) <= PARALLEL_TOL:
        raise GeometryError("line is parallel to the plane")
    t = float(n @ (np.asarray(plane.origin) - np.asarray(line.point))) / denom
    return line.at(t)


def world_to_pixel(plane: ImagePlane, p: object) -> tuple[float, float]:
    delta = np.asarray(_vec3(p)) - np.asarray(plane.origin)
    row = float(delta @ np.asarray(plane.row_dir)) / plane.spacing[0]
    col = float(delta @ np.asarray(plane.col_dir)) / plane.spacing[1]
    return row, col


def pixel_to_world(plane: ImagePlane, row: float, col: float) -> np.ndarray:
    return (
        np.asarray(plane.origin)
        + row * plane.spacing[0] * np.asarray(plane.row_dir)
        + col * plane.spacing[1] * np.asarray(plane.col_dir)
    )


def coarse_center(sax: ImagePlane, ch2: ImagePlane, ch4: ImagePlane) -> CoarseCenter:
    """Pixel position on the SAX image where the 2CH/4CH intersection line pierces it."""
    axis = intersect_planes(ch2, ch4)
    hit = intersect_line_plane(axis, sax)
    row, col = world_to_pixel(sax, hit)
    rows, cols = sax.extent
    in_extent = 0.0 <= row <= rows - 1 and 0.0 <= col <= cols - 1
    if not in_extent:
        log.warning("geometry: coarse center (%.1f, %.1f) outside %dx%d image; clamped", row, col, rows, cols)
        row = min(max(row, 0.0), rows - 1.0)
        col = min(max(col, 0.0), cols - 1.0)
    return CoarseCenter(row, col, in_extent)
