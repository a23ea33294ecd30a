"""Front quality indicators: 2-D hypervolume and empirical attainment functions."""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .pareto import non_dominated_filter
from .qubo import QuboMatrix, positive_coefficient_sum

HV_DISPLAY_SCALE = 1e23
MAX_GRID_CELLS = 10**6


class ReferencePoint(NamedTuple):
    r1: float
    r2: float


class AttainmentSurface(NamedTuple):
    level: int
    staircase: np.ndarray  # (m, 2), f1 ascending, f2 strictly descending


def _as_points(front) -> np.ndarray:
    return np.asarray(front, dtype=np.float64).reshape(-1, 2)


def hypervolume_2d(front, ref) -> float:
    """Area dominated by ``front`` and bounded by ``ref`` (both objectives minimised).

    Points outside the reference box are dropped with a warning.
    """
    pts = _as_points(front)
    r1, r2 = float(ref[0]), float(ref[1])
    inside = (pts[:, 0] <= r1) & (pts[:, 1] <= r2)
    if not inside.all():
        warnings.warn(
            f"{int((~inside).sum())} point(s) outside the reference box ignored",
            RuntimeWarning,
            stacklevel=2,
        )
    pts = pts[inside]
    if pts.shape[0] == 0:
        return 0.0
    pts = np.unique(pts[non_dominated_filter(pts)], axis=0)
    # ascending f1 implies strictly descending f2 for a non-dominated set
    widths = np.diff(np.append(pts[:, 0], r1))
    return float(np.sum((r2 - pts[:, 1]) * widths))


def default_reference(B: QuboMatrix, D: QuboMatrix) -> ReferencePoint:
    """Sum of the positive coefficients of each objective matrix."""
    return ReferencePoint(positive_coefficient_sum(B), positive_coefficient_sum(D))


def _staircase(front):
    """Sorted f1 values and running-min f2 of one run, for attainment lookups."""
    pts = _as_points(front)
    if pts.shape[0] == 0:
        return np.empty(0), np.empty(0)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    f1 = pts[order, 0]
    best = np.minimum.accumulate(pts[order, 1])
    return f1, best


def _attained_f2(stair, x):
    """Smallest f2 the run reaches with f1 <= x (inf when none)."""
    f1, best = stair
    idx = np.searchsorted(f1, x, side="right") - 1
    out = np.full(np.shape(x), np.inf)
    ok = idx >= 0
    out[ok] = best[idx[ok]]
    return out


def eaf(runs, grid) -> np.ndarray:
    """Fraction of runs whose front weakly dominates each grid point.

    Returns an array with one probability per grid row.
    """
    if len(runs) == 0:
        raise ValueError("at least one run is required")
    g = _as_points(grid)
    hits = np.zeros(g.shape[0])
    for front in runs:
        hits += _attained_f2(_staircase(front), g[:, 0]) <= g[:, 1]
    return hits / len(runs)


def eaf_difference(runs_a, runs_b, grid) -> np.ndarray:
    """``eaf(runs_a) - eaf(runs_b)``; positive where A attains more often."""
    return eaf(runs_a, grid) - eaf(runs_b, grid)


def attainment_surface(runs, level: int) -> AttainmentSurface:
    """Boundary of the region attained by at least ``level`` of the runs.

    Level 1 is the best-case surface and ``len(runs)`` the worst case.
    """
    n_runs = len(runs)
    if not 1 <= level <= n_runs:
        raise ValueError(f"level must lie in [1, {n_runs}], got {level}")
    stairs = [_staircase(front) for front in runs]
    xs = np.unique(np.concatenate([s[0] for s in stairs] + [np.empty(0)]))
    if xs.size == 0:
        return AttainmentSurface(level, np.empty((0, 2)))
    reached = np.vstack([_attained_f2(s, xs) for s in stairs])
    y = np.sort(reached, axis=0)[level - 1]
    keep = np.isfinite(y)
    keep[1:] &= y[1:] < y[:-1]
    return AttainmentSurface(level, np.column_stack([xs[keep], y[keep]]))


def eaf_grid(runs, max_cells: int = MAX_GRID_CELLS) -> np.ndarray:
    """All pairs of distinct f1 and f2 values seen in any run.

    When the product exceeds ``max_cells`` each axis is thinned uniformly.
    """
    pts = np.vstack([_as_points(f) for f in runs] + [np.empty((0, 2))])
    xs = np.unique(pts[:, 0])
    ys = np.unique(pts[:, 1])
    if xs.size * ys.size > max_cells:
        ratio = np.sqrt(max_cells / (xs.size * ys.size))
        xs = xs[np.unique(np.linspace(0, xs.size - 1, max(1, int(xs.size * ratio))).astype(int))]
        ys = ys[np.unique(np.linspace(0, ys.size - 1, max(1, int(ys.size * ratio))).astype(int))]
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])
