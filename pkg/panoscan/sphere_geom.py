"""Viewport grid over the viewing sphere and gnomonic viewport rendering
from equirectangular (ERP) panoramas.

An ERP image is an ``(H, W, 3)`` float array with ``W == 2 * H`` and values
in ``[0, 1]``; column ``x`` covers longitude ``-pi + (x + 0.5) * 2pi / W`` at
its center and row ``y`` latitude ``pi/2 - (y + 0.5) * pi / H``.
"""
from __future__ import annotations

import dataclasses
import math
from collections.abc import Collection
from collections.abc import Iterator
from typing import NamedTuple

import numpy as np

from panoscan.diffcore import Array
from panoscan.errors import ArgumentError


class Viewport(NamedTuple):
    index: int
    yaw: float
    pitch: float
    fov: float  # degrees


@dataclasses.dataclass(frozen=True)
class ViewportGrid:
    n_yaw: int
    n_pitch: int
    fov: float
    viewports: tuple[Viewport, ...]

    def __len__(self) -> int:
        return len(self.viewports)

    def __iter__(self) -> Iterator[Viewport]:
        return iter(self.viewports)

    def __getitem__(self, index: int) -> Viewport:
        return self.viewports[index]

    @property
    def size(self) -> int:
        return len(self.viewports)

    def pitches(self) -> Array:
        return np.array([vp.pitch for vp in self.viewports])


def normalize_yaw(yaw: float) -> float:
    """Maps ``yaw`` into ``[-pi, pi)``, canonical to 1e-12 so that angles
    differing by whole turns render identically."""
    ret = round((yaw + math.pi) % (2 * math.pi) - math.pi, 12)
    if ret >= math.pi:
        ret -= 2 * math.pi
    return ret


def check_erp(erp: Array) -> None:
    if erp.ndim != 3 or erp.shape[2] != 3:
        raise ArgumentError(f'ERP images are H x W x 3, got {erp.shape}')
    if erp.shape[1] != 2 * erp.shape[0]:
        raise ArgumentError(
            f'ERP images have a 2:1 aspect ratio, got {erp.shape[1]}x{erp.shape[0]}',
        )


def build_grid(n_yaw: int, n_pitch: int, fov: float = 90.0) -> ViewportGrid:
    if n_yaw < 1 or n_pitch < 1:
        raise ArgumentError(
            f'grid needs at least one cell per axis, got {n_yaw}x{n_pitch}',
        )
    if not 0 < fov < 180:
        raise ArgumentError(f'fov must be in (0, 180) degrees, got {fov}')
    viewports = []
    for j in range(n_pitch):
        pitch = -math.pi / 2 + (j + 0.5) * math.pi / n_pitch
        for i in range(n_yaw):
            yaw = -math.pi + (i + 0.5) * 2 * math.pi / n_yaw
            viewports.append(
                Viewport(j * n_yaw + i, normalize_yaw(yaw), pitch, fov),
            )
    return ViewportGrid(n_yaw, n_pitch, fov, tuple(viewports))


def viewport_rays(vp: Viewport, res: int) -> tuple[Array, Array]:
    """Returns the (longitude, latitude) seen by each output pixel."""
    if res < 2:
        raise ArgumentError(f'viewport resolution must be >= 2, got {res}')
    half = math.tan(math.radians(vp.fov) / 2)
    centers = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    x, y = np.meshgrid(centers * half, -centers * half)
    z = np.ones_like(x)

    yaw = normalize_yaw(vp.yaw)
    cp, sp = math.cos(vp.pitch), math.sin(vp.pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    # pitch about the camera x axis, then yaw about the world up axis
    y1 = y * cp + z * sp
    z1 = -y * sp + z * cp
    wx = x * cy + z1 * sy
    wz = -x * sy + z1 * cy
    lon = np.arctan2(wx, wz)
    lat = np.arctan2(y1, np.hypot(wx, wz))
    return lon, lat


def erp_coords(lon: Array, lat: Array, width: int, height: int) -> tuple[Array, Array]:
    """Continuous ERP coordinates; pixel ``(x, y)`` has its center at
    ``(x + 0.5, y + 0.5)``."""
    u = (lon + math.pi) / (2 * math.pi) * width
    v = (math.pi / 2 - lat) / math.pi * height
    return u, v


def _lerp(a: Array, b: Array, t: Array) -> Array:
    # exact when a == b, so constant images stay constant
    return a + (b - a) * t


def sample_bilinear(erp: Array, u: Array, v: Array) -> Array:
    """Bilinear lookup with longitude wraparound and latitude clamping."""
    height, width = erp.shape[:2]
    uu = u - 0.5
    vv = np.clip(v - 0.5, 0.0, height - 1.0)
    x0f = np.floor(uu)
    y0f = np.floor(vv)
    fx = (uu - x0f)[..., None]
    fy = (vv - y0f)[..., None]
    x0 = x0f.astype(np.int64) % width
    x1 = (x0 + 1) % width
    y0 = y0f.astype(np.int64)
    y1 = np.minimum(y0 + 1, height - 1)
    top = _lerp(erp[y0, x0], erp[y0, x1], fx)
    bottom = _lerp(erp[y1, x0], erp[y1, x1], fx)
    return _lerp(top, bottom, fy)


def render_viewport(erp: Array, vp: Viewport, res: int = 224) -> Array:
    """Gnomonic rendering of ``vp`` as a ``(res, res, 3)`` image."""
    check_erp(erp)
    lon, lat = viewport_rays(vp, res)
    u, v = erp_coords(lon, lat, erp.shape[1], erp.shape[0])
    return sample_bilinear(erp, u, v)


def render_all(erp: Array, grid: ViewportGrid, res: int) -> Array:
    return np.stack([render_viewport(erp, vp, res) for vp in grid])


def coverage_fraction(visited: Collection[int], x: int) -> float:
    for i in visited:
        if not 0 <= i < x:
            raise ArgumentError(f'viewport index {i} outside 0..{x - 1}')
    return len(set(visited)) / x


def pixel_lonlat(width: int, height: int) -> tuple[Array, Array]:
    """Longitude and latitude of every ERP pixel center, ``(H, W)`` each."""
    lon = -math.pi + (np.arange(width) + 0.5) * 2 * math.pi / width
    lat = math.pi / 2 - (np.arange(height) + 0.5) * math.pi / height
    lon_map, lat_map = np.meshgrid(lon, lat)
    return lon_map, lat_map
