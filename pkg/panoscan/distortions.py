"""Distortion-space augmentation at three severity levels.

Each application is described by a :class:`DistortionSpec` ``(kind, param,
seed)``; :func:`apply_spec` reproduces it exactly, so dataset manifests only
store that tuple.
"""
from __future__ import annotations

import dataclasses
import enum
import functools
import math
from typing import Any
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.fft import dctn
from scipy.fft import idctn

from panoscan.diffcore import Array
from panoscan.errors import ArgumentError


class Severity(enum.Enum):
    WEAK = 'weak'
    MILD = 'mild'
    STRONG = 'strong'


KINDS = ('jpeg', 'motion_blur', 'defocus_blur', 'color_jitter', 'poisson')
WEAK_KINDS = ('jpeg', 'motion_blur', 'defocus_blur', 'color_jitter')

# the standard JPEG luminance quantization table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

# deviations reached by the default strong jitter range; color severity is
# measured against them
STRONG_JITTER_DEVIATION = 0.4
STRONG_JITTER_HUE = 20.0


class JitterFactors(NamedTuple):
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0  # degrees

    @property
    def deviation(self) -> float:
        """Largest distance of brightness, contrast or saturation from 1."""
        return max(
            abs(self.brightness - 1.0),
            abs(self.contrast - 1.0),
            abs(self.saturation - 1.0),
        )


class DistortionSpec(NamedTuple):
    """One applied distortion. Color jitter also records its drawn factors,
    with ``param`` holding their :attr:`JitterFactors.deviation`."""
    kind: str
    param: float
    seed: int
    factors: JitterFactors | None = None

    def to_json(self) -> dict[str, Any]:
        param: float | int = self.param
        if self.kind in ('jpeg', 'motion_blur'):
            param = int(self.param)
        ret: dict[str, Any] = {'kind': self.kind, 'param': param, 'seed': self.seed}
        if self.factors is not None:
            ret['factors'] = list(self.factors)
        return ret

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> DistortionSpec:
        if obj.get('kind') not in KINDS:
            raise ArgumentError(f'unknown distortion kind {obj.get("kind")!r}')
        factors = None
        if 'factors' in obj:
            factors = JitterFactors(*(float(v) for v in obj['factors']))
        elif obj['kind'] == 'color_jitter':
            raise ArgumentError('color_jitter entry has no factors')
        return cls(obj['kind'], float(obj['param']), int(obj['seed']), factors)


@dataclasses.dataclass(frozen=True)
class SeverityTable:
    """Parameter ranges per kind and severity; ``None`` means the kind is not
    drawn at that severity."""
    jpeg: dict[Severity, tuple[float, float]] = dataclasses.field(
        default_factory=lambda: {
            Severity.WEAK: (85, 95),
            Severity.MILD: (60, 75),
            Severity.STRONG: (20, 40),
        },
    )
    motion_blur: dict[Severity, tuple[float, float]] = dataclasses.field(
        default_factory=lambda: {
            Severity.WEAK: (3, 7),
            Severity.MILD: (7, 11),
            Severity.STRONG: (11, 19),
        },
    )
    defocus_blur: dict[Severity, tuple[float, float]] = dataclasses.field(
        default_factory=lambda: {
            Severity.WEAK: (1.0, 2.0),
            Severity.MILD: (2.0, 3.0),
            Severity.STRONG: (4.0, 6.0),
        },
    )
    color_jitter: dict[Severity, tuple[float, float]] = dataclasses.field(
        default_factory=lambda: {
            Severity.WEAK: (0.95, 1.05),
            Severity.MILD: (0.85, 1.15),
            Severity.STRONG: (0.6, 1.4),
        },
    )
    # hue rotation bound in degrees, drawn from [-h, h]
    jitter_hue: dict[Severity, float] = dataclasses.field(
        default_factory=lambda: {
            Severity.WEAK: 3.0,
            Severity.MILD: 8.0,
            Severity.STRONG: 20.0,
        },
    )
    poisson: dict[Severity, tuple[float, float]] = dataclasses.field(
        default_factory=lambda: {
            Severity.MILD: (18.0, 30.0),
            Severity.STRONG: (6.0, 12.0),
        },
    )

    def range(self, kind: str, severity: Severity) -> tuple[float, float] | None:
        table: dict[Severity, tuple[float, float]] = getattr(self, kind)
        return table.get(severity)

    def kinds(self, severity: Severity) -> tuple[str, ...]:
        candidates = WEAK_KINDS if severity is Severity.WEAK else KINDS
        return tuple(k for k in candidates if self.range(k, severity) is not None)


DEFAULT_TABLE = SeverityTable()


def _check_image(img: Array) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ArgumentError(f'expected an H x W x 3 image, got {img.shape}')


def jpeg_quant_table(q: int) -> Array:
    """libjpeg quality scaling of the luminance table."""
    if not 1 <= q <= 100:
        raise ArgumentError(f'jpeg quality must be in [1, 100], got {q}')
    scale = 5000 / q if q < 50 else 200 - 2 * q
    return np.clip(np.floor((JPEG_LUMA_TABLE * scale + 50) / 100), 1, 255)


def jpeg_proxy(img: Array, q: int) -> Array:
    """8x8 block DCT quantization of every channel.

    The DC coefficient of each block is kept, so flat blocks survive any
    quality setting.
    """
    _check_image(img)
    table = jpeg_quant_table(q)
    h, w, c = img.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(img * 255.0 - 128.0, ((0, ph), (0, pw), (0, 0)), mode='edge')
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(bh, 8, bw, 8, c).transpose(0, 2, 4, 1, 3)
    coef = dctn(blocks, type=2, norm='ortho', axes=(-2, -1))
    quant = np.round(coef / table) * table
    quant[..., 0, 0] = coef[..., 0, 0]
    out = idctn(quant, type=2, norm='ortho', axes=(-2, -1))
    out = out.transpose(0, 3, 1, 4, 2).reshape(bh * 8, bw * 8, c)[:h, :w]
    return np.clip((out + 128.0) / 255.0, 0.0, 1.0)


def _convolve(img: Array, kernel: Array) -> Array:
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.convolve(img[..., ch], kernel, mode='nearest')
    return np.clip(out, 0.0, 1.0)


@functools.lru_cache(maxsize=256)
def motion_kernel(k: int, angle: float) -> Array:
    """Unit-mass line of length ``k`` pixels, rasterized by the length of
    line falling in each pixel."""
    if k < 1 or k % 2 == 0:
        raise ArgumentError(f'motion blur kernel length must be odd, got {k}')
    samples_per_pixel = 64
    n = samples_per_pixel * k
    t = -k / 2 + (np.arange(n) + 0.5) / samples_per_pixel
    half = k // 2
    cols = np.clip(np.round(t * math.cos(angle)), -half, half).astype(np.int64)
    rows = np.clip(np.round(-t * math.sin(angle)), -half, half).astype(np.int64)
    kernel = np.zeros((k, k))
    np.add.at(kernel, (rows + half, cols + half), 1.0)
    kernel /= kernel.sum()
    kernel.setflags(write=False)
    return kernel


def motion_blur(img: Array, k: int, angle: float) -> Array:
    _check_image(img)
    kernel = motion_kernel(k, angle)
    if k == 1:
        return img.copy()
    return _convolve(img, kernel)


@functools.lru_cache(maxsize=256)
def disk_kernel(r: float) -> Array:
    """Normalized disk; rim pixels weighted by the area inside the disk."""
    if r < 0:
        raise ArgumentError(f'defocus radius must be >= 0, got {r}')
    half = int(math.ceil(r - 0.5)) if r > 0.5 else 0
    sub = 16
    offsets = (np.arange(sub) + 0.5) / sub - 0.5
    grid = np.arange(-half, half + 1)
    yy = grid[:, None, None, None] + offsets[None, None, :, None]
    xx = grid[None, :, None, None] + offsets[None, None, None, :]
    inside = (xx * xx + yy * yy) <= r * r
    kernel = inside.mean(axis=(2, 3))
    if kernel.sum() == 0:
        kernel = np.ones((1, 1))
    kernel = kernel / kernel.sum()
    kernel.setflags(write=False)
    return kernel


def defocus_blur(img: Array, r: float) -> Array:
    _check_image(img)
    kernel = disk_kernel(r)
    if kernel.shape == (1, 1):
        return img.copy()
    return _convolve(img, kernel)


def draw_jitter(
        rng: np.random.Generator,
        lo_hi: tuple[float, float],
        hue: float,
) -> JitterFactors:
    """Brightness, contrast and saturation each uniform in ``lo_hi``; hue
    uniform in ``[-hue, hue]`` degrees; all four independent."""
    lo, hi = lo_hi
    b, c, s = rng.uniform(lo, hi, size=3)
    return JitterFactors(float(b), float(c), float(s), float(rng.uniform(-hue, hue)))


# YIQ keeps luma in its first component, so rotating I/Q preserves luma
_RGB_TO_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.595716, -0.274453, -0.321263],
    [0.211456, -0.522591, 0.311135],
])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


def adjust_color(img: Array, f: JitterFactors) -> Array:
    _check_image(img)
    out = img * f.brightness
    mean = out.mean(axis=(0, 1), keepdims=True)
    out = mean + f.contrast * (out - mean)
    luma = (out @ _RGB_TO_YIQ[0])[..., None]
    out = luma + f.saturation * (out - luma)
    if f.hue != 0.0:
        theta = math.radians(f.hue)
        rot = np.array([
            [1.0, 0.0, 0.0],
            [0.0, math.cos(theta), -math.sin(theta)],
            [0.0, math.sin(theta), math.cos(theta)],
        ])
        gray = np.all(out == out[..., :1], axis=2)
        rotated = out @ (_YIQ_TO_RGB @ rot @ _RGB_TO_YIQ).T
        out = np.where(gray[..., None], out, rotated)
    return np.clip(out, 0.0, 1.0)


def _draw(
        rng: np.random.Generator,
        kind: str,
        lo_hi: tuple[float, float],
) -> float:
    lo, hi = lo_hi
    if kind == 'jpeg':
        return float(rng.integers(int(lo), int(hi), endpoint=True))
    elif kind == 'motion_blur':
        odd = [k for k in range(int(lo), int(hi) + 1) if k % 2 == 1]
        return float(odd[int(rng.integers(len(odd)))])
    else:
        return float(rng.uniform(lo, hi))


def jitter_spec(
        severity: Severity,
        seed: int,
        table: SeverityTable = DEFAULT_TABLE,
        rng: np.random.Generator | None = None,
) -> DistortionSpec:
    lo_hi = table.range('color_jitter', severity)
    assert lo_hi is not None
    rng = np.random.default_rng(seed) if rng is None else rng
    factors = draw_jitter(rng, lo_hi, table.jitter_hue[severity])
    return DistortionSpec('color_jitter', factors.deviation, seed, factors)


def color_jitter(
        img: Array,
        severity: Severity,
        seed: int,
        table: SeverityTable = DEFAULT_TABLE,
) -> Array:
    spec = jitter_spec(severity, seed, table)
    assert spec.factors is not None
    return adjust_color(img, spec.factors)


def poisson_noise(img: Array, lam: float, seed: int) -> Array:
    if lam <= 0:
        raise ArgumentError(f'poisson lambda must be positive, got {lam}')
    rng = np.random.default_rng(seed)
    counts = rng.poisson(np.clip(img, 0.0, 1.0) * lam)
    return np.clip(counts / lam, 0.0, 1.0)


def motion_angle(seed: int) -> float:
    return float(np.random.default_rng([seed, 1]).uniform(0.0, math.pi))


def apply_spec(img: Array, spec: DistortionSpec) -> Array:
    if spec.kind == 'jpeg':
        return jpeg_proxy(img, int(spec.param))
    elif spec.kind == 'motion_blur':
        return motion_blur(img, int(spec.param), motion_angle(spec.seed))
    elif spec.kind == 'defocus_blur':
        return defocus_blur(img, spec.param)
    elif spec.kind == 'color_jitter':
        if spec.factors is None:
            raise ArgumentError('color_jitter needs its drawn factors')
        return adjust_color(img, spec.factors)
    elif spec.kind == 'poisson':
        return poisson_noise(img, spec.param, spec.seed)
    else:
        raise ArgumentError(f'unknown distortion kind {spec.kind!r}')


def sample_spec(
        severity: Severity,
        seed: int,
        table: SeverityTable = DEFAULT_TABLE,
) -> DistortionSpec:
    """One distortion kind and one parameter, uniform within the severity's
    ranges; never composes distortions."""
    rng = np.random.default_rng([seed, 0])
    kinds = table.kinds(severity)
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == 'color_jitter':
        return jitter_spec(severity, seed, table, rng)
    lo_hi = table.range(kind, severity)
    assert lo_hi is not None
    return DistortionSpec(kind, _draw(rng, kind, lo_hi), seed)


def augment(
        img: Array,
        severity: Severity,
        seed: int,
        table: SeverityTable = DEFAULT_TABLE,
) -> tuple[Array, DistortionSpec]:
    spec = sample_spec(severity, seed, table)
    return apply_spec(img, spec), spec


def normalized_severity(spec: DistortionSpec) -> float:
    """Linear ramp from a parameter to a severity in [0, 1]."""
    if spec.kind == 'jpeg':
        s = (95.0 - spec.param) / 75.0
    elif spec.kind == 'motion_blur':
        s = (spec.param - 1.0) / 18.0
    elif spec.kind == 'defocus_blur':
        s = spec.param / 6.0
    elif spec.kind == 'color_jitter':
        hue = 0.0 if spec.factors is None else abs(spec.factors.hue)
        s = max(spec.param / STRONG_JITTER_DEVIATION, hue / STRONG_JITTER_HUE)
    elif spec.kind == 'poisson':
        s = 6.0 / spec.param
    else:
        raise ArgumentError(f'unknown distortion kind {spec.kind!r}')
    return float(np.clip(s, 0.0, 1.0))
