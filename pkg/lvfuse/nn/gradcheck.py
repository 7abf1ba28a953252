"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

DEFAULT_STEP = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_gradient(
    fn: Callable[[], float],
    x: np.ndarray,
    indices: list[tuple[int, ...]],
    step: float = DEFAULT_STEP,
) -> np.ndarray:
    """d fn / d x at `indices`; `x` is perturbed in place and restored."""
    out = np.empty(len(indices))
    for k, idx in enumerate(indices):
        old = x[idx]
        x[idx] = old + step
        plus = fn()
        x[idx] = old - step
        minus = fn()
        x[idx] = old
        out[k] = (plus - minus) / (2 * step)
    return out


def sample_indices(shape: tuple[int, ...], count: int | None, seed: int = 0) -> list[tuple[int, ...]]:
    total = int(np.prod(shape))
    if count is None or count >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(np.random.default_rng(seed).choice(total, size=count, replace=False))
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in flat]


def gradient_check(
    fn: Callable[[], float],
    x: np.ndarray,
    analytic: np.ndarray,
    step: float = DEFAULT_STEP,
    samples: int | None = None,
    seed: int = 0,
) -> float:
    """Relative error between `analytic` and central differences of `fn` w.r.t. `x`."""
    indices = sample_indices(x.shape, samples, seed)
    numeric = numeric_gradient(fn, x, indices, step)
    picked = np.array([analytic[idx] for idx in indices])
    return relative_error(picked, numeric)
