"""Compact deterministic viewport encoder.

The encoder is a frozen function of its input: 32 hand-built descriptors,
mapped to ``d`` dimensions by a random projection drawn from a constant seed
and then standardized per component by fixed constants. A manifest may point
at a sidecar of precomputed vectors instead, which replaces the encoder
entirely.
"""
from __future__ import annotations

import dataclasses
import functools
import threading
from collections.abc import Callable

import numpy as np
from scipy import ndimage

from panoscan import checkpoint
from panoscan import pngio
from panoscan.diffcore import Array
from panoscan.errors import ArgumentError
from panoscan.errors import CheckpointIncompatibleError
from panoscan.image_ops import mean_local_variance
from panoscan.image_ops import shannon_entropy
from panoscan.image_ops import ssim
from panoscan.image_ops import SSIM_WINDOW
from panoscan.image_ops import to_gray
from panoscan.sphere_geom import render_all
from panoscan.sphere_geom import ViewportGrid

RAW_DIM = 32
MIN_SIZE = 8
PROJECTION_SEED = 0x5CA7
GLOBAL_SIZE = (64, 32)
ORIENTATION_BINS = 8

# expected center and spread of each raw descriptor, in descriptor order
_CENTER = np.concatenate([
    np.full(16, 0.5),
    np.full(ORIENTATION_BINS, 1.0 / ORIENTATION_BINS),
    np.full(3, 0.5),
    np.full(3, 0.15),
    [5.0, 0.01],
])
_SCALE = np.concatenate([
    np.full(16, 0.25),
    np.full(ORIENTATION_BINS, 0.1),
    np.full(3, 0.25),
    np.full(3, 0.1),
    [2.0, 0.01],
])


def luminance_grid(gray: Array, n: int = 4) -> Array:
    rows = np.array_split(gray, n, axis=0)
    return np.array([
        block.mean()
        for row in rows
        for block in np.array_split(row, n, axis=1)
    ])


def orientation_histogram(gray: Array, bins: int = ORIENTATION_BINS) -> Array:
    """Magnitude-weighted histogram of unsigned Sobel orientations,
    L1-normalized; all zeros on a flat image."""
    gx = ndimage.sobel(gray, axis=1, mode='nearest')
    gy = ndimage.sobel(gray, axis=0, mode='nearest')
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.minimum((theta / np.pi * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx.reshape(-1), weights=mag.reshape(-1), minlength=bins)
    total = hist.sum()
    if total <= 1e-12:
        return np.zeros(bins)
    return hist / total


def raw_descriptor(img: Array) -> Array:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ArgumentError(f'expected an H x W x 3 image, got {img.shape}')
    if min(img.shape[:2]) < MIN_SIZE:
        raise ArgumentError(
            f'images must be at least {MIN_SIZE}x{MIN_SIZE}, got {img.shape[:2]}',
        )
    gray = to_gray(img)
    if min(gray.shape) >= SSIM_WINDOW:
        local_var = mean_local_variance(gray)
    else:
        local_var = float(np.var(gray))
    return np.concatenate([
        luminance_grid(gray),
        orientation_histogram(gray),
        img.mean(axis=(0, 1)),
        img.std(axis=(0, 1)),
        [shannon_entropy(gray), local_var],
    ])


@functools.lru_cache(maxsize=None)
def projection_matrix(d: int) -> Array:
    rng = np.random.default_rng(PROJECTION_SEED)
    ret = rng.standard_normal((d, RAW_DIM)) / np.sqrt(RAW_DIM)
    ret.setflags(write=False)
    return ret


@functools.lru_cache(maxsize=None)
def standardization(d: int) -> tuple[Array, Array]:
    """Center and scale of every projected component, carried through the
    projection from the fixed per-descriptor constants."""
    m = projection_matrix(d)
    center = m @ _CENTER
    scale = np.sqrt((m ** 2) @ (_SCALE ** 2))
    center.setflags(write=False)
    scale.setflags(write=False)
    return center, scale


def project(raw: Array, d: int) -> Array:
    center, scale = standardization(d)
    return (projection_matrix(d) @ raw - center) / scale


def encode_viewport(img: Array, d: int = 64) -> Array:
    return project(raw_descriptor(img), d)


def encode_global(erp: Array, d: int = 64) -> Array:
    width, height = GLOBAL_SIZE
    return project(raw_descriptor(pngio.downscale(erp, width, height)), d)


@dataclasses.dataclass
class ViewportBank:
    """Everything an episode needs about one image, computed once."""
    features: Array
    global_feat: Array
    pitches: Array
    gray: Array | None = None
    entropy: Array | None = None
    _ssim: dict[tuple[int, int], float] = dataclasses.field(default_factory=dict)
    _lock: threading.Lock = dataclasses.field(default_factory=threading.Lock)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    def ssim(self, i: int, j: int) -> float:
        if self.gray is None:
            raise ArgumentError('this bank holds features only')
        key = (min(i, j), max(i, j))
        with self._lock:
            cached = self._ssim.get(key)
        if cached is None:
            cached = ssim(self.gray[key[0]], self.gray[key[1]])
            with self._lock:
                self._ssim[key] = cached
        return cached


def precompute_all(erp: Array, grid: ViewportGrid, res: int, d: int = 64) -> Array:
    """Features of every candidate viewport, ``(X, d)``."""
    return np.stack([
        encode_viewport(r, d) for r in render_all(erp, grid, res)
    ])


def build_bank(
        erp: Array,
        grid: ViewportGrid,
        res: int,
        d: int = 64,
        sidecar: str | None = None,
) -> ViewportBank:
    renders = render_all(erp, grid, res)
    gray = np.stack([to_gray(r) for r in renders])
    if sidecar is None:
        features = np.stack([encode_viewport(r, d) for r in renders])
        global_feat = encode_global(erp, d)
    else:
        features, global_feat = load_feature_sidecar(sidecar, grid.size, d)
    return ViewportBank(
        features=features,
        global_feat=global_feat,
        pitches=grid.pitches(),
        gray=gray,
        entropy=np.array([shannon_entropy(g) for g in gray]),
    )


def build_feature_bank(
        erp: Array,
        grid: ViewportGrid,
        res: int,
        d: int = 64,
) -> ViewportBank:
    """Features only, for augmented variants that are scored but not
    explored."""
    return ViewportBank(
        features=precompute_all(erp, grid, res, d),
        global_feat=encode_global(erp, d),
        pitches=grid.pitches(),
    )


def load_feature_sidecar(path: str, x: int, d: int) -> tuple[Array, Array]:
    arrays = checkpoint.load_arrays(path)
    for name, shape in (('viewports', (x, d)), ('global', (d,))):
        if name not in arrays:
            raise CheckpointIncompatibleError(f'{path} has no entry {name!r}')
        if arrays[name].shape != shape:
            raise CheckpointIncompatibleError(
                'feature entry {!r} in {} has shape {}, expected {}'.format(
                    name, path, arrays[name].shape, shape,
                ),
            )
    return arrays['viewports'], arrays['global']


class BankCache:
    """Write-once map from a key to its bank, safe to fill from threads."""

    def __init__(self) -> None:
        self._banks: dict[object, ViewportBank] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._banks)

    def __contains__(self, key: object) -> bool:
        return key in self._banks

    def get(self, key: object, build: Callable[[], ViewportBank]) -> ViewportBank:
        with self._lock:
            bank = self._banks.get(key)
        if bank is None:
            bank = build()
            with self._lock:
                bank = self._banks.setdefault(key, bank)
        return bank
