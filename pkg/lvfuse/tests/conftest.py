"""Shared pytest configuration for lvfuse/tests."""

import os

import localize as loc
import pytest

SLOW = os.environ.get("LVFUSE_SLOW_TESTS", "").strip() == "1"
slow = pytest.mark.skipif(not SLOW, reason="set LVFUSE_SLOW_TESTS=1 to run long acceptance checks")


@pytest.fixture(autouse=True)
def clear_caches():
    """Automatically clear the phantom atlas cache between tests."""
    loc.clear_cache()


@pytest.fixture
def make_study():
    """Factory for small in-memory studies with integer pixels and axial SAX planes."""
    import numpy as np

    from data_model import Series, SeriesKind, Study, VolumeTruth
    from geometry import ImagePlane

    def build(
        study_id: str = "s001",
        positions: int = 8,
        frames: int = 4,
        size: int = 32,
        lax: tuple[SeriesKind, ...] = (SeriesKind.LAX_2CH, SeriesKind.LAX_4CH),
        truth: tuple[float, float] | None = (120.0, 50.0),
        age: float | None = 40.0,
        seed: int = 0,
    ) -> Study:
        rng = np.random.default_rng(seed)
        half = size / 2.0
        sax_planes = tuple(
            ImagePlane((-half, -half, -20.0 + 10.0 * i), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0), (size, size))
            for i in range(positions)
        )
        stacks = tuple(rng.integers(0, 1000, (frames, size, size)).astype(np.float64) for _ in range(positions))
        series = {SeriesKind.SAX: Series(SeriesKind.SAX, sax_planes, stacks)}
        lax_planes = {
            SeriesKind.LAX_2CH: ImagePlane((-half, 0.0, -half), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (1.0, 1.0), (size, size)),
            SeriesKind.LAX_4CH: ImagePlane((0.0, -half, -half), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 1.0), (size, size)),
        }
        for kind in lax:
            stack = rng.integers(0, 1000, (frames, size, size)).astype(np.float64)
            series[kind] = Series(kind, (lax_planes[kind],), (stack,))
        return Study(
            study_id,
            series,
            None if truth is None else VolumeTruth(*truth),
            age,
        )

    return build
