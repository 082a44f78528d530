"""Scanpath visitation heatmaps over the ERP image."""
from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from panoscan.diffcore import Array
from panoscan.errors import ArgumentError
from panoscan.sphere_geom import check_erp
from panoscan.sphere_geom import pixel_lonlat
from panoscan.sphere_geom import ViewportGrid

# blue -> cyan -> yellow -> red
RAMP_STOPS = (0.0, 1 / 3, 2 / 3, 1.0)
RAMP_COLORS = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
])
MAX_ALPHA = 0.6


def visit_counts(scanpaths: Sequence[Sequence[int]], x: int) -> Array:
    counts = np.zeros(x)
    for path in scanpaths:
        for i in path:
            if not 0 <= i < x:
                raise ArgumentError(f'viewport index {i} outside 0..{x - 1}')
            counts[i] += 1
    return counts


def angular_distance(lon1: Array, lat1: Array, lon2: float, lat2: float) -> Array:
    """Great-circle distance; longitude wraps by construction."""
    cos_d = (
        np.sin(lat1) * math.sin(lat2)
        + np.cos(lat1) * math.cos(lat2) * np.cos(lon1 - lon2)
    )
    return np.arccos(np.clip(cos_d, -1.0, 1.0))


def visitation_heat(
        scanpaths: Sequence[Sequence[int]],
        grid: ViewportGrid,
        width: int,
        height: int,
) -> Array:
    """Gaussian splat of viewport visits on the ERP raster, scaled to
    ``[0, 1]``; sigma is a quarter of the field of view."""
    counts = visit_counts(scanpaths, grid.size)
    lon, lat = pixel_lonlat(width, height)
    heat = np.zeros((height, width))
    sigma = math.radians(grid.fov) / 4
    for vp, n in zip(grid, counts):
        if n:
            d = angular_distance(lon, lat, vp.yaw, vp.pitch)
            heat += n * np.exp(-d ** 2 / (2 * sigma ** 2))
    peak = heat.max()
    return heat / peak if peak > 0 else heat


def color_ramp(heat: Array) -> Array:
    return np.stack(
        [np.interp(heat, RAMP_STOPS, RAMP_COLORS[:, c]) for c in range(3)],
        axis=-1,
    )


def overlay_heatmap(
        erp: Array,
        scanpaths: Sequence[Sequence[int]],
        grid: ViewportGrid,
) -> Array:
    """Blends the colored heat onto the panorama; unvisited areas keep the
    original pixels."""
    check_erp(erp)
    h, w = erp.shape[:2]
    heat = visitation_heat(scanpaths, grid, w, h)
    alpha = (MAX_ALPHA * heat)[..., None]
    return np.clip((1.0 - alpha) * erp + alpha * color_ramp(heat), 0.0, 1.0)
